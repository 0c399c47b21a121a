/**
 * End-to-end conformance: everything the exporter writes must be readable
 * by the primary component, byte for byte. The cross-language checks
 * shell into the installed `rescap` Python package.
 */

import { beforeAll, describe, expect, it } from 'vitest'
import { execFileSync } from 'child_process'
import { mkdirSync, mkdtempSync, readFileSync, readdirSync, writeFileSync } from 'fs'
import { tmpdir } from 'os'
import * as path from 'path'

import { encodePpm } from '../src/images.js'
import { exportFeatures } from '../src/export.js'

const PYTHON = process.env.RESCAP_PYTHON ?? 'python3'

function python(...args: string[]): string {
  return execFileSync(PYTHON, args, { encoding: 'utf-8' })
}

function makeImages(dir: string): void {
  mkdirSync(dir, { recursive: true })
  for (let k = 0; k < 3; k++) {
    const w = 64
    const h = 64
    const rgb = new Uint8Array(w * h * 3)
    for (let y = 16; y < 44; y++) {
      for (let x = 12 + 6 * k; x < 40 + 6 * k; x++) {
        rgb[3 * (y * w + x)] = 225
        rgb[3 * (y * w + x) + 1] = 50 + 70 * k
        rgb[3 * (y * w + x) + 2] = 40
      }
    }
    writeFileSync(path.join(dir, `img${k}.ppm`), encodePpm(w, h, rgb))
  }
  writeFileSync(path.join(dir, 'dark.ppm'), encodePpm(32, 32, new Uint8Array(32 * 32 * 3)))
  // an unreadable file that must be skipped with a warning, not crash
  writeFileSync(path.join(dir, 'broken.png'), Buffer.from('not a png'))
}

let workDir: string
let imagesDir: string

beforeAll(() => {
  workDir = mkdtempSync(path.join(tmpdir(), 'bridge-e2e-'))
  imagesDir = path.join(workDir, 'images')
  makeImages(imagesDir)
})

describe('exportFeatures', () => {
  it('writes records the primary validator accepts, capped at maxRegions', () => {
    const outDir = path.join(workDir, 'out1')
    const logs: string[] = []
    const result = exportFeatures({
      imageDir: imagesDir,
      outDir,
      maxRegions: 5,
      scoreThreshold: 0.15,
      seed: 7,
      log: m => logs.push(m),
    })
    expect(result.written).toBe(4)
    expect(result.skipped).toEqual(['broken.png'])
    expect(logs.join('\n')).toMatch(/skipping unreadable image broken.png/)

    // header check in-process: N <= maxRegions for every file
    for (const file of readdirSync(path.join(outDir, 'features'))) {
      const raw = readFileSync(path.join(outDir, 'features', file))
      expect(raw.subarray(0, 4).toString('ascii')).toBe('RTDF')
      expect(raw.readUInt32LE(8)).toBeLessThanOrEqual(5)
      expect(raw.readUInt32LE(12)).toBe(7)
      expect(raw.readUInt32LE(16)).toBe(7)
    }

    // cross-language: the primary component parses every exported file
    const report = python(
      '-c',
      `
import json
from rescap.data_io import read_manifest, read_rtdf
rows = read_manifest(${JSON.stringify(path.join(outDir, 'manifest.jsonl'))})
out = []
for row in rows:
    rec = read_rtdf(row["features"])
    out.append({"id": row["image_id"], "n": rec.num_regions, "d": rec.depth})
print(json.dumps(out))
`,
    )
    const parsed = JSON.parse(report.trim()) as { id: string; n: number; d: number }[]
    expect(parsed.length).toBe(4)
    for (const rec of parsed) {
      expect(rec.n).toBeLessThanOrEqual(5)
      expect(rec.d).toBe(32)
    }
  })

  it('featureless images produce the N=1 whole-image fallback', () => {
    const outDir = path.join(workDir, 'out2')
    const result = exportFeatures({
      imageDir: imagesDir,
      outDir,
      maxRegions: 6,
      scoreThreshold: 0.9,
      seed: 7,
    })
    expect(result.fallbacks.length).toBeGreaterThan(0)
    const raw = readFileSync(path.join(outDir, 'features', 'dark.rtdf'))
    expect(raw.readUInt32LE(8)).toBe(1)
  })

  it('is deterministic for a fixed seed and config', () => {
    const a = path.join(workDir, 'det-a')
    const b = path.join(workDir, 'det-b')
    for (const out of [a, b]) {
      exportFeatures({ imageDir: imagesDir, outDir: out, maxRegions: 4, seed: 3 })
    }
    for (const file of readdirSync(path.join(a, 'features'))) {
      const bytesA = readFileSync(path.join(a, 'features', file))
      const bytesB = readFileSync(path.join(b, 'features', file))
      expect(bytesA.equals(bytesB)).toBe(true)
    }
  })

  it('exported features load into the primary caption command', () => {
    // train a tiny checkpoint at the bridge's width, then caption an export
    const dataDir = path.join(workDir, 'pydata')
    const ckpt = path.join(workDir, 'model.rtdc')
    python('-m', 'rescap', 'gen-data', '--count', '12', '--out', dataDir,
           '--seed', '3', '--max-entities', '2')
    python('-m', 'rescap', 'train', '--data', dataDir, '--variant', 'BU+ResTd',
           '--out', ckpt, '--epochs', '1', '--seed', '0')

    const outDir = path.join(workDir, 'out3')
    exportFeatures({ imageDir: imagesDir, outDir, maxRegions: 5, seed: 7 })
    const features = readdirSync(path.join(outDir, 'features'))
      .map(f => path.join(outDir, 'features', f))
    const stdout = python('-m', 'rescap', 'caption', '--features', ...features,
                          '--ckpt', ckpt, '--beam', '2')
    const lines = stdout.trim().split('\n')
    expect(lines.length).toBe(features.length)
    for (const line of lines) {
      expect(line).toMatch(/^\w+\t/)
    }
  }, 120_000)
})
