/**
 * Image loading without native bindings: PNG via pngjs, plus binary PPM
 * (P6), which needs no dependency at all and is what the tests generate.
 */

import { readFileSync } from 'fs'
import { PNG } from 'pngjs'
import * as tf from '@tensorflow/tfjs'

export const SUPPORTED_EXTENSIONS = ['.png', '.ppm']

export function loadPng(path: string): tf.Tensor3D {
  const png = PNG.sync.read(readFileSync(path))
  const { width, height, data } = png
  const rgb = new Float32Array(width * height * 3)
  for (let i = 0; i < width * height; i++) {
    rgb[3 * i] = data[4 * i] / 255
    rgb[3 * i + 1] = data[4 * i + 1] / 255
    rgb[3 * i + 2] = data[4 * i + 2] / 255
  }
  return tf.tensor3d(rgb, [height, width, 3])
}

export function loadPpm(path: string): tf.Tensor3D {
  const raw = readFileSync(path)
  // header: "P6\n<width> <height>\n<maxval>\n" with arbitrary whitespace
  let pos = 0
  const token = () => {
    while (pos < raw.length && /\s/.test(String.fromCharCode(raw[pos]))) pos++
    if (raw[pos] === 0x23) { // comment line
      while (pos < raw.length && raw[pos] !== 0x0a) pos++
      return token()
    }
    const start = pos
    while (pos < raw.length && !/\s/.test(String.fromCharCode(raw[pos]))) pos++
    return raw.subarray(start, pos).toString('ascii')
  }
  if (token() !== 'P6') throw new Error(`${path}: not a binary PPM (P6) file`)
  const width = parseInt(token(), 10)
  const height = parseInt(token(), 10)
  const maxval = parseInt(token(), 10)
  pos++ // single whitespace after maxval
  if (!(width > 0 && height > 0) || maxval <= 0 || maxval > 255) {
    throw new Error(`${path}: unsupported PPM header`)
  }
  const need = width * height * 3
  if (raw.length - pos < need) {
    throw new Error(`${path}: truncated PPM payload`)
  }
  const rgb = new Float32Array(need)
  for (let i = 0; i < need; i++) {
    rgb[i] = raw[pos + i] / maxval
  }
  return tf.tensor3d(rgb, [height, width, 3])
}

export function loadImage(path: string): tf.Tensor3D {
  if (path.endsWith('.png')) return loadPng(path)
  if (path.endsWith('.ppm')) return loadPpm(path)
  throw new Error(`unsupported image type: ${path} (expected ${SUPPORTED_EXTENSIONS.join(', ')})`)
}

/** Minimal P6 writer, used by tests to fabricate inputs. */
export function encodePpm(width: number, height: number, rgb: Uint8Array): Buffer {
  if (rgb.length !== width * height * 3) {
    throw new Error(`rgb payload has ${rgb.length} bytes, expected ${width * height * 3}`)
  }
  return Buffer.concat([Buffer.from(`P6\n${width} ${height}\n255\n`, 'ascii'), Buffer.from(rgb)])
}
