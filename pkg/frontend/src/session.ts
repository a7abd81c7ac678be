// Session logic: everything the UI does between DOM events and the
// node API.  Keys and plaintext exist only inside this object; every
// outbound body contains them sealed or encrypted.

import { b64decode, b64encode, hexEncode, utf8Decode, utf8Encode } from "./b64.js";
import { CanonicalValue, canonicalJson } from "./canonical.js";
import {
  decryptMessage,
  encryptMessage,
  openWithPrivateKey,
  sealToPublicKey,
} from "./crypto.js";
import { FetchLike, NodeApi } from "./api.js";
import { importKeystore, Keystore } from "./keystore.js";
import { buildEnvelope, readAuthHeaders, WireCertificate, certificateDigest } from "./wire.js";

export const PLAINTEXT_LIMIT = 60 * 1024;

export interface DecryptedMessage {
  key: string;
  ledgerTimestamp: bigint;
  sender: string;
  sentAtClient: number;
  text: string;
}

export interface UndecryptableMessage {
  key: string;
  ledgerTimestamp: bigint;
  error: string;
}

export interface PendingEcho {
  text: string;
  sentAt: number;
}

export interface PollResult {
  messages: DecryptedMessage[];
  failures: UndecryptableMessage[];
}

function ledgerTsOf(key: string): bigint {
  return BigInt(key.split("-", 1)[0]);
}

export class Session {
  readonly keystore: Keystore;
  private api: NodeApi;
  private lastSeen = new Map<string, bigint>();
  private pending = new Map<string, PendingEcho[]>();

  private constructor(keystore: Keystore, fetchImpl?: FetchLike) {
    this.keystore = keystore;
    this.api = new NodeApi(keystore.homeNodeAddress, fetchImpl);
  }

  /** Decrypt a keystore file into a fresh session; wrong passphrase
   * throws and leaves no partial state behind. */
  static async login(
    fileText: string,
    passphrase: string,
    fetchImpl?: FetchLike,
  ): Promise<Session> {
    const keystore = await importKeystore(fileText, passphrase);
    return new Session(keystore, fetchImpl);
  }

  get username(): string {
    return this.keystore.username;
  }

  get nodeAddress(): string {
    return this.keystore.homeNodeAddress;
  }

  channels(): { channelId: string; name: string | null }[] {
    return Array.from(this.keystore.channelKeys, ([channelId, entry]) => ({
      channelId,
      name: entry.name,
    }));
  }

  lastSeenOf(channelId: string): bigint {
    return this.lastSeen.get(channelId) ?? 0n;
  }

  pendingFor(channelId: string): PendingEcho[] {
    return this.pending.get(channelId) ?? [];
  }

  private cert(): WireCertificate {
    return this.keystore.certificate;
  }

  private async post(
    path: string,
    body: Record<string, CanonicalValue>,
  ): Promise<Record<string, unknown>> {
    const envelope = await buildEnvelope(this.keystore.privateKey, this.cert(), body);
    return this.api.post(path, envelope);
  }

  /** Retrieve and open our sealed channel key (joining a channel whose
   * id was shared out of band). */
  async fetchChannelKey(channelId: string): Promise<void> {
    const resp = await this.post(`/channels/${channelId}/key`, { channel: channelId });
    const sealed = b64decode(String(resp.sealed_key));
    const secret = await openWithPrivateKey(
      this.keystore.privateKey,
      this.keystore.publicKey,
      sealed,
    );
    if (secret.length !== 32) {
      throw new Error("channel secret has the wrong size");
    }
    this.keystore.channelKeys.set(channelId, { key: secret, name: null });
  }

  private channelKey(channelId: string): Uint8Array {
    const entry = this.keystore.channelKeys.get(channelId);
    if (!entry) {
      throw new Error("no channel key cached; fetch the channel key first");
    }
    return entry.key;
  }

  /** Encrypt and submit one message; an optimistic echo is kept until
   * the committed copy comes back in a poll. */
  async send(channelId: string, text: string): Promise<void> {
    if (!text) {
      throw new Error("message text must not be empty");
    }
    if (utf8Encode(text).length > PLAINTEXT_LIMIT) {
      throw new Error("message too large");
    }
    const key = this.channelKey(channelId);
    const payload = canonicalJson({
      sender_username: this.keystore.username,
      sent_at_client: Date.now(),
      text,
    });
    const ciphertext = await encryptMessage(key, utf8Encode(payload));
    await this.post(`/channels/${channelId}/messages`, {
      channel: channelId,
      message: b64encode(ciphertext),
    });
    const echoes = this.pending.get(channelId) ?? [];
    echoes.push({ text, sentAt: Date.now() });
    this.pending.set(channelId, echoes);
  }

  /** Fetch, decrypt, and hand back everything since the last poll.
   * Entries that fail authenticated decryption are reported as explicit
   * failures, never dropped. */
  async poll(channelId: string): Promise<PollResult> {
    const key = this.channelKey(channelId);
    const since = this.lastSeen.has(channelId)
      ? (this.lastSeen.get(channelId) as bigint) + 1n
      : 0n;
    const body = { channel: channelId, ts: since };
    const headers = await readAuthHeaders(this.keystore.privateKey, this.cert(), body);
    const wireMessages = await this.api.readMessages(channelId, since, headers);
    const messages: DecryptedMessage[] = [];
    const failures: UndecryptableMessage[] = [];
    for (const entry of wireMessages) {
      const ledgerTimestamp = ledgerTsOf(entry.key);
      const seen = this.lastSeen.get(channelId) ?? -1n;
      if (ledgerTimestamp > seen) {
        this.lastSeen.set(channelId, ledgerTimestamp);
      }
      try {
        const plaintext = await decryptMessage(key, b64decode(entry.message));
        const payload = JSON.parse(utf8Decode(plaintext));
        messages.push({
          key: entry.key,
          ledgerTimestamp,
          sender: String(payload.sender_username ?? ""),
          sentAtClient: Number(payload.sent_at_client ?? 0),
          text: String(payload.text ?? ""),
        });
      } catch (e) {
        failures.push({
          key: entry.key,
          ledgerTimestamp,
          error: e instanceof Error ? e.message : String(e),
        });
      }
    }
    this.reconcileEchoes(channelId, messages);
    return { messages, failures };
  }

  private reconcileEchoes(channelId: string, incoming: DecryptedMessage[]): void {
    const echoes = this.pending.get(channelId);
    if (!echoes || echoes.length === 0) return;
    const remaining = echoes.filter(
      (echo) =>
        !incoming.some(
          (m) => m.sender === this.keystore.username && m.text === echo.text,
        ),
    );
    this.pending.set(channelId, remaining);
  }

  /** Two-step member addition: fetch the member's public key, seal the
   * channel secret to it, submit. */
  async addMember(
    channelId: string,
    username: string,
    nodeAddress: string,
  ): Promise<void> {
    const key = this.channelKey(channelId);
    const step1 = await this.post(`/channels/${channelId}/members`, {
      channel: channelId,
      username,
      node_address: nodeAddress,
    });
    const memberCert = step1.certificate as WireCertificate;
    const publicKey = b64decode(String(step1.public_key));
    const sealed = await sealToPublicKey(publicKey, key);
    const digest = await certificateDigest(memberCert);
    await this.post(`/channels/${channelId}/members`, {
      channel: channelId,
      username,
      node_address: nodeAddress,
      sealed_key: b64encode(sealed),
      member_digest: hexEncode(digest),
    });
  }

  /** Federate another node into the channel. */
  async addNode(channelId: string, nodeAddress: string): Promise<void> {
    await this.post(`/channels/${channelId}/nodes`, {
      channel: channelId,
      new_node_address: nodeAddress,
    });
  }
}
