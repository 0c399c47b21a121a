/**
 * Counter-mode splitmix64 over BigInt: deterministic weight streams that
 * match the convention used across the project (seeded substreams derived
 * by folding keys into the seed).
 */

const MASK64 = (1n << 64n) - 1n
const GOLDEN = 0x9e3779b97f4a7c15n

export function mix64(x: bigint): bigint {
  x &= MASK64
  x = ((x ^ (x >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK64
  x = ((x ^ (x >> 27n)) * 0x94d049bb133111ebn) & MASK64
  return (x ^ (x >> 31n)) & MASK64
}

export function deriveSeed(seed: bigint | number, ...keys: number[]): bigint {
  let out = mix64(BigInt(seed))
  for (const k of keys) {
    out = mix64(out ^ ((BigInt(k) * GOLDEN) & MASK64))
  }
  return out
}

/** count float64 samples in [0, 1) from the counter stream. */
export function uniformArray(seed: bigint | number, count: number): Float64Array {
  const base = mix64(BigInt(seed))
  const out = new Float64Array(count)
  for (let i = 0; i < count; i++) {
    const x = mix64((base + BigInt(i + 1) * GOLDEN) & MASK64)
    out[i] = Number(x >> 11n) / 2 ** 53
  }
  return out
}

/** count standard-normal samples via Box-Muller on the uniform stream. */
export function normalArray(seed: bigint | number, count: number): Float64Array {
  const pairs = Math.ceil(count / 2)
  const u = uniformArray(seed, 2 * pairs)
  const out = new Float64Array(2 * pairs)
  for (let i = 0; i < pairs; i++) {
    const u1 = 1 - u[i] // (0, 1], keeps log away from zero
    const u2 = u[pairs + i]
    const r = Math.sqrt(-2 * Math.log(u1))
    out[2 * i] = r * Math.cos(2 * Math.PI * u2)
    out[2 * i + 1] = r * Math.sin(2 * Math.PI * u2)
  }
  return out.subarray(0, count) as Float64Array
}
