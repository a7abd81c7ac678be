// Browser-side primitives via WebCrypto, wire-compatible with the node
// network: composite 64-byte keys (Ed25519 signing half, X25519 sealing
// half), ephemeral-key sealing (X25519 + HKDF-SHA256 + AES-256-GCM),
// and AES-256-GCM message encryption with the nonce prepended.

import { concatBytes, utf8Encode } from "./b64.js";

const subtle = globalThis.crypto.subtle;

export const PUBLIC_KEY_LEN = 64;
export const PRIVATE_KEY_LEN = 64;
export const NONCE_LEN = 16;
const AEAD_NONCE_LEN = 12;
const SEAL_INFO = utf8Encode("quarks.seal.v1");

// Minimal PKCS#8 wrappers for raw curve-25519 private keys.
const PKCS8_ED25519 = Uint8Array.from([
  0x30, 0x2e, 0x02, 0x01, 0x00, 0x30, 0x05, 0x06, 0x03, 0x2b, 0x65, 0x70,
  0x04, 0x22, 0x04, 0x20,
]);
const PKCS8_X25519 = Uint8Array.from([
  0x30, 0x2e, 0x02, 0x01, 0x00, 0x30, 0x05, 0x06, 0x03, 0x2b, 0x65, 0x6e,
  0x04, 0x22, 0x04, 0x20,
]);

export function freshNonce(): Uint8Array {
  return crypto.getRandomValues(new Uint8Array(NONCE_LEN));
}

export async function sha256(data: Uint8Array): Promise<Uint8Array> {
  return new Uint8Array(await subtle.digest("SHA-256", data as BufferSource));
}

// 4-byte big-endian length prefix; concatenation of prefixed fields is
// the canonical serialization used for signing and digests.
export function lp(field: Uint8Array): Uint8Array {
  const out = new Uint8Array(4 + field.length);
  new DataView(out.buffer).setUint32(0, field.length, false);
  out.set(field, 4);
  return out;
}

export function lpJoin(...fields: Uint8Array[]): Uint8Array {
  return concatBytes(...fields.map(lp));
}

export async function ed25519Sign(
  privateKey64: Uint8Array,
  message: Uint8Array,
): Promise<Uint8Array> {
  const pkcs8 = concatBytes(PKCS8_ED25519, privateKey64.slice(0, 32));
  const key = await subtle.importKey("pkcs8", pkcs8 as BufferSource, { name: "Ed25519" }, false, [
    "sign",
  ]);
  return new Uint8Array(await subtle.sign("Ed25519", key, message as BufferSource));
}

export async function ed25519Verify(
  publicKey64: Uint8Array,
  message: Uint8Array,
  signature: Uint8Array,
): Promise<boolean> {
  try {
    const key = await subtle.importKey(
      "raw",
      publicKey64.slice(0, 32) as BufferSource,
      { name: "Ed25519" },
      false,
      ["verify"],
    );
    return await subtle.verify("Ed25519", key, signature as BufferSource, message as BufferSource);
  } catch {
    return false;
  }
}

async function deriveSealKey(
  shared: Uint8Array,
  ephPub: Uint8Array,
  recipientXPub: Uint8Array,
): Promise<CryptoKey> {
  const ikm = await subtle.importKey("raw", shared as BufferSource, "HKDF", false, [
    "deriveBits",
  ]);
  const bits = await subtle.deriveBits(
    {
      name: "HKDF",
      hash: "SHA-256",
      salt: concatBytes(ephPub, recipientXPub) as BufferSource,
      info: SEAL_INFO as BufferSource,
    },
    ikm,
    256,
  );
  return subtle.importKey("raw", bits, { name: "AES-GCM" }, false, [
    "encrypt",
    "decrypt",
  ]);
}

async function x25519Shared(
  privateScalar: Uint8Array,
  publicRaw: Uint8Array,
): Promise<Uint8Array> {
  const priv = await subtle.importKey(
    "pkcs8",
    concatBytes(PKCS8_X25519, privateScalar) as BufferSource,
    { name: "X25519" },
    false,
    ["deriveBits"],
  );
  const pub = await subtle.importKey("raw", publicRaw as BufferSource, { name: "X25519" }, false, []);
  return new Uint8Array(
    await subtle.deriveBits({ name: "X25519", public: pub }, priv, 256),
  );
}

/** Seal a small payload to a member's composite public key. */
export async function sealToPublicKey(
  publicKey64: Uint8Array,
  plaintext: Uint8Array,
): Promise<Uint8Array> {
  const recipientXPub = publicKey64.slice(32);
  const eph = (await subtle.generateKey({ name: "X25519" }, true, [
    "deriveBits",
  ])) as CryptoKeyPair;
  const ephPub = new Uint8Array(await subtle.exportKey("raw", eph.publicKey));
  const pub = await subtle.importKey("raw", recipientXPub as BufferSource, { name: "X25519" }, false, []);
  const shared = new Uint8Array(
    await subtle.deriveBits({ name: "X25519", public: pub }, eph.privateKey, 256),
  );
  const key = await deriveSealKey(shared, ephPub, recipientXPub);
  const nonce = crypto.getRandomValues(new Uint8Array(AEAD_NONCE_LEN));
  const ct = new Uint8Array(
    await subtle.encrypt({ name: "AES-GCM", iv: nonce as BufferSource }, key, plaintext as BufferSource),
  );
  return concatBytes(ephPub, nonce, ct);
}

/** Open a blob sealed to our composite key; throws if tampered. */
export async function openWithPrivateKey(
  privateKey64: Uint8Array,
  publicKey64: Uint8Array,
  sealed: Uint8Array,
): Promise<Uint8Array> {
  if (sealed.length < 32 + AEAD_NONCE_LEN + 16) {
    throw new Error("sealed blob too short");
  }
  const ephPub = sealed.slice(0, 32);
  const nonce = sealed.slice(32, 32 + AEAD_NONCE_LEN);
  const ct = sealed.slice(32 + AEAD_NONCE_LEN);
  const shared = await x25519Shared(privateKey64.slice(32), ephPub);
  const key = await deriveSealKey(shared, ephPub, publicKey64.slice(32));
  try {
    return new Uint8Array(
      await subtle.decrypt({ name: "AES-GCM", iv: nonce as BufferSource }, key, ct as BufferSource),
    );
  } catch {
    throw new Error("sealed blob failed authentication");
  }
}

async function aesGcmKey(channelSecret: Uint8Array): Promise<CryptoKey> {
  return subtle.importKey("raw", channelSecret as BufferSource, { name: "AES-GCM" }, false, [
    "encrypt",
    "decrypt",
  ]);
}

export async function encryptMessage(
  channelSecret: Uint8Array,
  plaintext: Uint8Array,
): Promise<Uint8Array> {
  const nonce = crypto.getRandomValues(new Uint8Array(AEAD_NONCE_LEN));
  const key = await aesGcmKey(channelSecret);
  const ct = new Uint8Array(
    await subtle.encrypt({ name: "AES-GCM", iv: nonce as BufferSource }, key, plaintext as BufferSource),
  );
  return concatBytes(nonce, ct);
}

export async function decryptMessage(
  channelSecret: Uint8Array,
  ciphertext: Uint8Array,
): Promise<Uint8Array> {
  if (ciphertext.length < AEAD_NONCE_LEN + 16) {
    throw new Error("ciphertext too short");
  }
  const key = await aesGcmKey(channelSecret);
  try {
    return new Uint8Array(
      await subtle.decrypt(
        { name: "AES-GCM", iv: ciphertext.slice(0, AEAD_NONCE_LEN) as BufferSource },
        key,
        ciphertext.slice(AEAD_NONCE_LEN) as BufferSource,
      ),
    );
  } catch {
    throw new Error("message failed authentication");
  }
}
