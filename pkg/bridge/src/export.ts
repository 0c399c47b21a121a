/**
 * The export pipeline: images in, RTDF files + manifest out.
 *
 * Deterministic given (images, config): the backbone weights derive from
 * the seed, and files are processed in sorted name order.
 */

import { mkdirSync, readdirSync } from 'fs'
import * as path from 'path'

import {
  Backbone,
  DEFAULT_EXTRACTOR_CONFIG,
  SeededConvBackbone,
  extractRegionFeatures,
} from './detector.js'
import { SUPPORTED_EXTENSIONS, loadImage } from './images.js'
import { ManifestRow, writeManifest, writeRtdf } from './rtdf.js'

export interface ExportConfig {
  imageDir: string
  outDir: string
  maxRegions?: number
  scoreThreshold?: number
  seed?: number
  depth?: number
  gridSize?: number
  /** optional reference captions per image id, copied into the manifest */
  refs?: Record<string, string[]>
  backbone?: Backbone
  log?: (message: string) => void
}

export interface ExportResult {
  manifestPath: string
  written: number
  skipped: string[]
  fallbacks: string[]
}

export function exportFeatures(config: ExportConfig): ExportResult {
  const log = config.log ?? ((m: string) => console.error(`[bridge] ${m}`))
  const maxRegions = config.maxRegions ?? DEFAULT_EXTRACTOR_CONFIG.maxRegions
  const scoreThreshold = config.scoreThreshold ?? DEFAULT_EXTRACTOR_CONFIG.scoreThreshold
  const gridSize = config.gridSize ?? DEFAULT_EXTRACTOR_CONFIG.gridSize
  if (maxRegions < 1) throw new Error('maxRegions must be >= 1')
  if (scoreThreshold < 0 || scoreThreshold > 1) throw new Error('scoreThreshold must be in [0, 1]')

  const backbone =
    config.backbone ?? new SeededConvBackbone(config.seed ?? 0, config.depth ?? 32)

  const files = readdirSync(config.imageDir)
    .filter(f => SUPPORTED_EXTENSIONS.some(ext => f.endsWith(ext)))
    .sort()
  if (files.length === 0) {
    throw new Error(`no readable images (${SUPPORTED_EXTENSIONS.join(', ')}) in ${config.imageDir}`)
  }

  const featuresDir = path.join(config.outDir, 'features')
  mkdirSync(featuresDir, { recursive: true })

  const rows: ManifestRow[] = []
  const skipped: string[] = []
  const fallbacks: string[] = []
  for (const file of files) {
    const imageId = file.replace(/\.[^.]+$/, '')
    let image
    try {
      image = loadImage(path.join(config.imageDir, file))
    } catch (err) {
      log(`skipping unreadable image ${file}: ${(err as Error).message}`)
      skipped.push(file)
      continue
    }
    const features = extractRegionFeatures(image, backbone, {
      maxRegions,
      scoreThreshold,
      gridSize,
    })
    image.dispose()
    if (features.usedWholeImageFallback) {
      log(`no detections in ${file}; wrote the whole-image region`)
      fallbacks.push(file)
    }
    const rel = path.join('features', `${imageId}.rtdf`)
    writeRtdf(
      {
        imageId,
        globalFeat: features.globalFeat,
        grids: features.grids,
        n1: gridSize,
        n2: gridSize,
        depth: backbone.depth,
      },
      path.join(config.outDir, rel),
    )
    rows.push({ image_id: imageId, features: rel, refs: config.refs?.[imageId] ?? [] })
  }
  if (rows.length === 0) {
    throw new Error('every image failed to load; nothing exported')
  }
  const manifestPath = path.join(config.outDir, 'manifest.jsonl')
  writeManifest(rows, manifestPath)
  log(`wrote ${rows.length} records to ${manifestPath}`)
  return { manifestPath, written: rows.length, skipped, fallbacks }
}
