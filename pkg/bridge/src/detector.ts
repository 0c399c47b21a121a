/**
 * Region feature extraction behind a pluggable backbone.
 *
 * The pipeline mirrors a frozen two-stage detector: a convolutional
 * backbone produces a spatial feature map, a proposer scores candidate
 * boxes, non-maximum suppression and a score threshold keep a small set,
 * and each surviving box is RoI-pooled to an n1 x n2 grid. The global
 * image vector is the average-pooled backbone map.
 *
 * No pretrained weights are downloadable in the build environment, so the
 * default backbone is a fixed, seeded convolution stack and the proposer
 * scores boxes by local feature energy. Swapping in a real model means
 * implementing `Backbone.featureMap` with e.g. a tfjs GraphModel's last
 * spatial node; everything downstream is unchanged.
 */

import * as tf from '@tensorflow/tfjs'
import { normalArray, deriveSeed } from './rng.js'

export interface Box {
  /** normalized [y0, x0, y1, x1], all in [0, 1] */
  coords: [number, number, number, number]
  score: number
}

export interface Backbone {
  readonly depth: number
  /** (H, W, 3) image in [0,1] -> (H', W', depth) feature map */
  featureMap(image: tf.Tensor3D): tf.Tensor3D
}

export interface ExtractorConfig {
  maxRegions: number
  scoreThreshold: number
  gridSize: number // n1 = n2
}

export const DEFAULT_EXTRACTOR_CONFIG: ExtractorConfig = {
  maxRegions: 36,
  scoreThreshold: 0.2,
  gridSize: 7,
}

export interface RegionFeatures {
  boxes: Box[]
  /** one Float32Array of length gridSize*gridSize*depth per box */
  grids: Float32Array[]
  globalFeat: Float32Array
  usedWholeImageFallback: boolean
}

/** Fixed random conv stack; weights derive from the seed alone. */
export class SeededConvBackbone implements Backbone {
  readonly depth: number
  private readonly kernels: tf.Tensor4D[]

  constructor(seed: number, depth = 32, channels: number[] = [12, 24]) {
    this.depth = depth
    const widths = [3, ...channels, depth]
    this.kernels = []
    for (let layer = 0; layer + 1 < widths.length; layer++) {
      const [cin, cout] = [widths[layer], widths[layer + 1]]
      const fan = 3 * 3 * cin
      const values = normalArray(deriveSeed(seed, 31, layer), 3 * 3 * cin * cout)
      const scaled = Float32Array.from(values, v => v * Math.sqrt(2 / fan))
      this.kernels.push(tf.tensor4d(scaled, [3, 3, cin, cout]))
    }
  }

  featureMap(image: tf.Tensor3D): tf.Tensor3D {
    return tf.tidy(() => {
      let x = image.expandDims(0) as tf.Tensor4D
      for (const kernel of this.kernels) {
        x = tf.relu(tf.conv2d(x, kernel, 2, 'same'))
      }
      return x.squeeze([0]) as tf.Tensor3D
    })
  }

  dispose(): void {
    this.kernels.forEach(k => k.dispose())
  }
}

function iou(a: Box, b: Box): number {
  const [ay0, ax0, ay1, ax1] = a.coords
  const [by0, bx0, by1, bx1] = b.coords
  const y0 = Math.max(ay0, by0)
  const x0 = Math.max(ax0, bx0)
  const y1 = Math.min(ay1, by1)
  const x1 = Math.min(ax1, bx1)
  const inter = Math.max(0, y1 - y0) * Math.max(0, x1 - x0)
  const areaA = (ay1 - ay0) * (ax1 - ax0)
  const areaB = (by1 - by0) * (bx1 - bx0)
  return inter / (areaA + areaB - inter || 1)
}

export function nonMaxSuppression(boxes: Box[], iouThreshold = 0.5): Box[] {
  const sorted = [...boxes].sort((a, b) => b.score - a.score)
  const kept: Box[] = []
  for (const candidate of sorted) {
    if (kept.every(k => iou(k, candidate) < iouThreshold)) {
      kept.push(candidate)
    }
  }
  return kept
}

/**
 * Candidate boxes around every feature-map cell, scored by the cell's
 * feature energy squashed to [0, 1) on an absolute scale (1 - exp(-E)).
 * Featureless images therefore score uniformly low and can genuinely
 * produce zero detections above a threshold.
 */
export function proposeBoxes(featureMap: tf.Tensor3D, boxCells = 2): Box[] {
  const [h, w] = featureMap.shape
  const energy = tf.tidy(() =>
    featureMap.square().mean(-1).sqrt().arraySync(),
  ) as number[][]
  const boxes: Box[] = []
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      boxes.push({
        coords: [
          Math.max(0, (y - boxCells) / h),
          Math.max(0, (x - boxCells) / w),
          Math.min(1, (y + boxCells + 1) / h),
          Math.min(1, (x + boxCells + 1) / w),
        ],
        score: 1 - Math.exp(-energy[y][x]),
      })
    }
  }
  return boxes
}

function roiPool(featureMap: tf.Tensor3D, boxes: Box[], gridSize: number): Float32Array[] {
  const pooled = tf.tidy(() => {
    const batch = featureMap.expandDims(0) as tf.Tensor4D
    const coords = tf.tensor2d(boxes.map(b => b.coords), [boxes.length, 4])
    const indices = tf.tensor1d(new Array(boxes.length).fill(0), 'int32')
    return tf.image.cropAndResize(batch, coords, indices, [gridSize, gridSize])
  })
  const flat = pooled.dataSync() as Float32Array
  pooled.dispose()
  const per = gridSize * gridSize * featureMap.shape[2]
  return boxes.map((_, i) => flat.slice(i * per, (i + 1) * per))
}

export function extractRegionFeatures(
  image: tf.Tensor3D,
  backbone: Backbone,
  config: ExtractorConfig = DEFAULT_EXTRACTOR_CONFIG,
): RegionFeatures {
  if (config.maxRegions < 1) throw new Error('maxRegions must be >= 1')
  if (config.scoreThreshold < 0 || config.scoreThreshold > 1) {
    throw new Error('scoreThreshold must be in [0, 1]')
  }
  const featureMap = backbone.featureMap(image)
  const globalFeat = tf.tidy(() =>
    featureMap.mean([0, 1]).dataSync(),
  ) as Float32Array

  let kept = nonMaxSuppression(proposeBoxes(featureMap))
    .filter(b => b.score >= config.scoreThreshold)
    .slice(0, config.maxRegions)
  let usedWholeImageFallback = false
  if (kept.length === 0) {
    // zero detections: one whole-image region keeps the record valid
    kept = [{ coords: [0, 0, 1, 1], score: 0 }]
    usedWholeImageFallback = true
  }
  const grids = roiPool(featureMap, kept, config.gridSize)
  featureMap.dispose()
  return { boxes: kept, grids, globalFeat: Float32Array.from(globalFeat), usedWholeImageFallback }
}
