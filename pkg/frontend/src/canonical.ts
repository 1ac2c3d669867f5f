/**
 * Canonical text serialization, matching the relay's formatter byte for
 * byte (proto_version 1):
 *
 *  - object keys sorted, "," / ":" separators, no whitespace
 *  - strings escape only backslash, double quote, and control chars
 *    below 0x20 (as \u00xx, lowercase hex)
 *  - floats print like C's %.9g (9 significant digits, trailing zeros
 *    stripped, exponent with at least two digits); -0 prints as 0
 *
 * Numbers parsed from canonical text re-serialize exactly: integers in
 * this protocol stay below 1e15, and a float that prints without a
 * decimal point is indistinguishable from the integer of the same value.
 */

export function fmtFloat(x: number): string {
  if (!isFinite(x)) throw new Error(`non-finite float: ${x}`);
  if (x === 0) return "0";
  const m = x.toExponential(8).match(/^(-?)(\d)\.(\d{8})e([+-]\d+)$/);
  if (!m) throw new Error(`unexpected exponential form for ${x}`);
  const sign = m[1];
  const exp = parseInt(m[4], 10);
  let digits = (m[2] + m[3]).replace(/0+$/, "");
  if (digits === "") digits = "0";
  if (exp < -4 || exp >= 9) {
    const mant = digits.length > 1 ? digits[0] + "." + digits.slice(1) : digits;
    const esign = exp < 0 ? "-" : "+";
    const eabs = String(Math.abs(exp)).padStart(2, "0");
    return `${sign}${mant}e${esign}${eabs}`;
  }
  if (exp >= digits.length - 1) {
    return sign + digits + "0".repeat(exp - (digits.length - 1));
  }
  if (exp >= 0) {
    return sign + digits.slice(0, exp + 1) + "." + digits.slice(exp + 1);
  }
  return sign + "0." + "0".repeat(-exp - 1) + digits;
}

/** Quantize to the canonical 9-significant-digit value. */
export function canonFloat(x: number): number {
  return Number(fmtFloat(x));
}

function fmtNumber(n: number): string {
  if (Number.isInteger(n) && Math.abs(n) < 1e15) return String(n); // String(-0) is "0"
  return fmtFloat(n);
}

function escapeString(s: string): string {
  let out = "";
  for (const ch of s) {
    const cp = ch.codePointAt(0)!;
    if (ch === '"') out += '\\"';
    else if (ch === "\\") out += "\\\\";
    else if (cp < 0x20) out += "\\u" + cp.toString(16).padStart(4, "0");
    else out += ch;
  }
  return out;
}

export type Tree = null | boolean | number | string | Tree[] | { [key: string]: Tree };

/** Serialize a parsed/constructed tree to its unique canonical text. */
export function dumps(node: Tree): string {
  if (node === null) return "null";
  if (node === true) return "true";
  if (node === false) return "false";
  if (typeof node === "number") return fmtNumber(node);
  if (typeof node === "string") return `"${escapeString(node)}"`;
  if (Array.isArray(node)) return "[" + node.map(dumps).join(",") + "]";
  const keys = Object.keys(node).sort();
  return "{" + keys.map((k) => `"${escapeString(k)}":${dumps(node[k])}`).join(",") + "}";
}

// ---- SHA-256 (compact, dependency-free; works in browser and node) ----

const K = new Uint32Array([
  0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
  0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
  0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
  0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
  0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
  0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
  0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
  0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2,
]);

function rotr(x: number, n: number): number {
  return (x >>> n) | (x << (32 - n));
}

export function sha256Hex(text: string): string {
  const data = new TextEncoder().encode(text);
  const bitLen = data.length * 8;
  const padded = new Uint8Array(((data.length + 8) >> 6 << 6) + 64);
  padded.set(data);
  padded[data.length] = 0x80;
  const dv = new DataView(padded.buffer);
  dv.setUint32(padded.length - 8, Math.floor(bitLen / 0x100000000));
  dv.setUint32(padded.length - 4, bitLen >>> 0);

  const h = new Uint32Array([
    0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19,
  ]);
  const w = new Uint32Array(64);
  for (let off = 0; off < padded.length; off += 64) {
    for (let i = 0; i < 16; i++) w[i] = dv.getUint32(off + i * 4);
    for (let i = 16; i < 64; i++) {
      const s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >>> 3);
      const s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >>> 10);
      w[i] = (w[i - 16] + s0 + w[i - 7] + s1) >>> 0;
    }
    let [a, b, c, d, e, f, g, hh] = h;
    for (let i = 0; i < 64; i++) {
      const S1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
      const ch = (e & f) ^ (~e & g);
      const t1 = (hh + S1 + ch + K[i] + w[i]) >>> 0;
      const S0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
      const maj = (a & b) ^ (a & c) ^ (b & c);
      const t2 = (S0 + maj) >>> 0;
      hh = g; g = f; f = e; e = (d + t1) >>> 0;
      d = c; c = b; b = a; a = (t1 + t2) >>> 0;
    }
    h[0] = (h[0] + a) >>> 0; h[1] = (h[1] + b) >>> 0; h[2] = (h[2] + c) >>> 0; h[3] = (h[3] + d) >>> 0;
    h[4] = (h[4] + e) >>> 0; h[5] = (h[5] + f) >>> 0; h[6] = (h[6] + g) >>> 0; h[7] = (h[7] + hh) >>> 0;
  }
  return Array.from(h, (x) => x.toString(16).padStart(8, "0")).join("");
}

export function treeHash(tree: Tree): string {
  return sha256Hex(dumps(tree));
}
