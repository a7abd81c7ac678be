// Envelope construction and certificate handling, matching the node's
// wire format: every request is signed over (nonce, canonical body).

import { b64decode, b64encode, utf8Encode } from "./b64.js";
import { CanonicalValue, canonicalJson } from "./canonical.js";
import { ed25519Sign, freshNonce, lp, lpJoin, sha256 } from "./crypto.js";

export interface WireCertificate {
  username: string;
  node_address: string;
  public_key: string;
  issued_at: number;
  signature: string;
}

export interface Envelope {
  nonce: string;
  sender_certificate: WireCertificate | null;
  body: Record<string, CanonicalValue>;
  signature: string;
}

function u64be(value: bigint): Uint8Array {
  const out = new Uint8Array(8);
  new DataView(out.buffer).setBigUint64(0, value, false);
  return out;
}

export async function certificateDigest(cert: WireCertificate): Promise<Uint8Array> {
  const fields = lpJoin(
    utf8Encode(cert.username),
    utf8Encode(cert.node_address),
    b64decode(cert.public_key),
    u64be(BigInt(cert.issued_at)),
  );
  const full = new Uint8Array([...fields, ...lp(b64decode(cert.signature))]);
  return sha256(full);
}

export function signingBytes(
  nonce: Uint8Array,
  body: Record<string, CanonicalValue>,
): Uint8Array {
  return lpJoin(nonce, utf8Encode(canonicalJson(body)));
}

export async function buildEnvelope(
  privateKey: Uint8Array,
  senderCertificate: WireCertificate | null,
  body: Record<string, CanonicalValue>,
): Promise<Envelope> {
  const nonce = freshNonce();
  const signature = await ed25519Sign(privateKey, signingBytes(nonce, body));
  return {
    nonce: b64encode(nonce),
    sender_certificate: senderCertificate,
    body,
    signature: b64encode(signature),
  };
}

/** Headers carrying the envelope for authenticated GET requests. */
export async function readAuthHeaders(
  privateKey: Uint8Array,
  cert: WireCertificate,
  body: Record<string, CanonicalValue>,
): Promise<Record<string, string>> {
  const nonce = freshNonce();
  const signature = await ed25519Sign(privateKey, signingBytes(nonce, body));
  return {
    "X-Quarks-Nonce": b64encode(nonce),
    "X-Quarks-Certificate": b64encode(utf8Encode(canonicalJson(cert as unknown as CanonicalValue))),
    "X-Quarks-Signature": b64encode(signature),
  };
}
