/**
 * RTDF writer: the byte contract shared with the rescap reader.
 *
 * Layout (all little-endian):
 *   magic "RTDF" | u32 version=1 | u32 N | u32 n1 | u32 n2 | u32 D
 *   payload: global vector (D f32), then N grids of n1*n2*D f32 each
 *   in row, col, channel order.
 */

import { writeFileSync, appendFileSync } from 'fs'

export const RTDF_MAGIC = 'RTDF'
export const RTDF_VERSION = 1

export interface FeatureRecord {
  imageId: string
  /** width-D global image vector */
  globalFeat: Float32Array
  /** N grids, each (n1*n2) x D flattened row-major */
  grids: Float32Array[]
  n1: number
  n2: number
  depth: number
}

function assertFinite(values: Float32Array, what: string): void {
  for (let i = 0; i < values.length; i++) {
    if (!Number.isFinite(values[i])) {
      throw new Error(`refusing to write non-finite value in ${what}`)
    }
  }
}

export function encodeRtdf(record: FeatureRecord): Buffer {
  const { globalFeat, grids, n1, n2, depth } = record
  if (grids.length < 1) throw new Error('a record needs at least one region grid')
  if (globalFeat.length !== depth) {
    throw new Error(`global vector width ${globalFeat.length} does not match D=${depth}`)
  }
  const cells = n1 * n2
  for (const g of grids) {
    if (g.length !== cells * depth) {
      throw new Error(`grid has ${g.length} values, expected ${cells * depth}`)
    }
  }
  assertFinite(globalFeat, 'global vector')
  grids.forEach((g, i) => assertFinite(g, `grid ${i}`))

  const header = Buffer.alloc(24)
  header.write(RTDF_MAGIC, 0, 'ascii')
  header.writeUInt32LE(RTDF_VERSION, 4)
  header.writeUInt32LE(grids.length, 8)
  header.writeUInt32LE(n1, 12)
  header.writeUInt32LE(n2, 16)
  header.writeUInt32LE(depth, 20)

  const payload = Buffer.alloc(4 * depth * (1 + grids.length * cells))
  let offset = 0
  for (const v of globalFeat) {
    payload.writeFloatLE(v, offset)
    offset += 4
  }
  for (const g of grids) {
    for (const v of g) {
      payload.writeFloatLE(v, offset)
      offset += 4
    }
  }
  return Buffer.concat([header, payload])
}

export function writeRtdf(record: FeatureRecord, path: string): void {
  writeFileSync(path, encodeRtdf(record))
}

export interface ManifestRow {
  image_id: string
  /** path relative to the manifest file */
  features: string
  refs: string[]
}

export function writeManifest(rows: ManifestRow[], path: string): void {
  const seen = new Set<string>()
  for (const row of rows) {
    if (seen.has(row.image_id)) throw new Error(`duplicate image_id ${row.image_id}`)
    seen.add(row.image_id)
  }
  writeFileSync(path, '')
  for (const row of rows) {
    appendFileSync(path, JSON.stringify(row) + '\n')
  }
}
