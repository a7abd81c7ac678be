// Keystore file handling: the wallet the CLI writes, imported into the
// browser.  Secret fields are encrypted under a scrypt-derived key; the
// decrypted material lives only in memory, never in browser storage.

import scryptPkg from "scrypt-js";

import { b64decode, b64encode } from "./b64.js";
import { canonicalJson, CanonicalValue } from "./canonical.js";
import { WireCertificate } from "./wire.js";

const subtle = globalThis.crypto.subtle;
const SEALED_NONCE_LEN = 12;

export interface ChannelKeyEntry {
  key: Uint8Array;
  name: string | null;
}

export interface Keystore {
  username: string;
  homeNodeAddress: string;
  publicKey: Uint8Array;
  privateKey: Uint8Array;
  certificate: WireCertificate;
  channelKeys: Map<string, ChannelKeyEntry>;
}

interface KeystoreFile {
  version: number;
  username: string;
  home_node_address: string;
  public_key: string;
  certificate: WireCertificate | null;
  kdf: { name: string; n: number; r: number; p: number; salt: string };
  sealed_secrets: string;
}

async function deriveKey(passphrase: string, file: KeystoreFile): Promise<CryptoKey> {
  if (file.kdf.name !== "scrypt") {
    throw new Error("unsupported keystore KDF: " + file.kdf.name);
  }
  const derived = await scryptPkg.scrypt(
    new TextEncoder().encode(passphrase),
    b64decode(file.kdf.salt),
    file.kdf.n,
    file.kdf.r,
    file.kdf.p,
    32,
  );
  return subtle.importKey("raw", new Uint8Array(derived) as BufferSource, { name: "AES-GCM" }, false, [
    "encrypt",
    "decrypt",
  ]);
}

export async function importKeystore(
  fileText: string,
  passphrase: string,
): Promise<Keystore> {
  let file: KeystoreFile;
  try {
    file = JSON.parse(fileText);
  } catch {
    throw new Error("keystore file is not valid JSON");
  }
  if (file.version !== 1) {
    throw new Error("unsupported keystore version");
  }
  if (!file.certificate) {
    throw new Error("keystore is not registered yet; register via the CLI first");
  }
  const key = await deriveKey(passphrase, file);
  const sealed = b64decode(file.sealed_secrets);
  let raw: Uint8Array;
  try {
    raw = new Uint8Array(
      await subtle.decrypt(
        { name: "AES-GCM", iv: sealed.slice(0, SEALED_NONCE_LEN) as BufferSource },
        key,
        sealed.slice(SEALED_NONCE_LEN) as BufferSource,
      ),
    );
  } catch {
    throw new Error("wrong passphrase or corrupted keystore");
  }
  const secrets = JSON.parse(new TextDecoder().decode(raw));
  const channelKeys = new Map<string, ChannelKeyEntry>();
  for (const [channelId, entry] of Object.entries(
    (secrets.channel_keys ?? {}) as Record<string, { key: string; name: string | null }>,
  )) {
    channelKeys.set(channelId, {
      key: b64decode(entry.key),
      name: entry.name ?? null,
    });
  }
  return {
    username: file.username,
    homeNodeAddress: file.home_node_address,
    publicKey: b64decode(file.public_key),
    privateKey: b64decode(secrets.private_key),
    certificate: file.certificate,
    channelKeys,
  };
}

/** Re-encrypt the keystore for download after keys changed in-session. */
export async function exportKeystore(
  keystore: Keystore,
  passphrase: string,
): Promise<string> {
  const salt = crypto.getRandomValues(new Uint8Array(16));
  const kdf = { name: "scrypt", n: 16384, r: 8, p: 1, salt: b64encode(salt) };
  const channelKeys: Record<string, CanonicalValue> = {};
  for (const [channelId, entry] of keystore.channelKeys) {
    channelKeys[channelId] = { key: b64encode(entry.key), name: entry.name };
  }
  const secrets = canonicalJson({
    private_key: b64encode(keystore.privateKey),
    channel_keys: channelKeys,
  });
  const derived = await scryptPkg.scrypt(
    new TextEncoder().encode(passphrase),
    salt,
    kdf.n,
    kdf.r,
    kdf.p,
    32,
  );
  const key = await subtle.importKey("raw", new Uint8Array(derived) as BufferSource, { name: "AES-GCM" }, false, [
    "encrypt",
  ]);
  const nonce = crypto.getRandomValues(new Uint8Array(SEALED_NONCE_LEN));
  const ct = new Uint8Array(
    await subtle.encrypt(
      { name: "AES-GCM", iv: nonce as BufferSource },
      key,
      new TextEncoder().encode(secrets) as BufferSource,
    ),
  );
  const sealed = new Uint8Array([...nonce, ...ct]);
  return canonicalJson({
    version: 1,
    username: keystore.username,
    home_node_address: keystore.homeNodeAddress,
    public_key: b64encode(keystore.publicKey),
    certificate: keystore.certificate as unknown as CanonicalValue,
    kdf,
    sealed_secrets: b64encode(sealed),
  });
}
