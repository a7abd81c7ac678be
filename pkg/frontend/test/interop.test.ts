// Cross-implementation checks: everything the browser produces must be
// byte-compatible with what the Python nodes and CLI produce.

import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { b64decode, b64encode, hexEncode, utf8Encode } from "../src/b64.js";
import { canonicalJson } from "../src/canonical.js";
import {
  decryptMessage,
  encryptMessage,
  openWithPrivateKey,
  sealToPublicKey,
} from "../src/crypto.js";
import { importKeystore } from "../src/keystore.js";
import { certificateDigest } from "../src/wire.js";
import { cli, PASSPHRASE, python, startNode, TestNode } from "./helpers.js";

let workDir: string;
let node: TestNode;
let keystorePath: string;
let keystoreText: string;

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "quarks-webui-"));
  node = await startNode(join(workDir, "node1"));
  keystorePath = join(workDir, "alice.ks");
  await cli(["--keystore", keystorePath, "keygen", "--node", node.address, "--username", "alice"]);
  await cli(["--keystore", keystorePath, "register"]);
  keystoreText = readFileSync(keystorePath, "utf-8");
}, 60_000);

afterAll(async () => {
  await node.stop();
  rmSync(workDir, { recursive: true, force: true });
});

describe("canonical JSON", () => {
  it("matches the node's canonical form byte for byte", async () => {
    const tricky = {
      b: 1,
      a: {
        x: 'é\n\t"\\',
        y: [2, 3],
        emoji: "🚀",
        ctrl: "",
        empty: "",
      },
      n: null,
      flag: true,
      big: 1759999999999999999n,
    };
    const ours = canonicalJson(tricky);
    const theirs = await python(
      "import sys, json\n" +
        "from quarks.wire import canonical_json\n" +
        "value = json.loads(sys.stdin.read())\n" +
        "sys.stdout.write(canonical_json(value).decode('ascii'))",
      ours,
    );
    expect(theirs).toBe(ours);
  });

  it("escapes like the reference for known cases", () => {
    expect(canonicalJson({ a: "é" })).toBe('{"a":"\\u00e9"}');
    expect(canonicalJson({ a: "🚀" })).toBe('{"a":"\\ud83d\\ude80"}');
    expect(canonicalJson({ b: 1, a: 2 })).toBe('{"a":2,"b":1}');
  });

  it("rejects non-integers", () => {
    expect(() => canonicalJson({ x: 1.5 })).toThrow();
    expect(() => canonicalJson({ x: Number.MAX_SAFE_INTEGER + 2 })).toThrow();
  });
});

describe("keystore import", () => {
  it("decrypts a CLI-written keystore", async () => {
    const ks = await importKeystore(keystoreText, PASSPHRASE);
    expect(ks.username).toBe("alice");
    expect(ks.homeNodeAddress).toBe(node.address);
    expect(ks.publicKey.length).toBe(64);
    expect(ks.privateKey.length).toBe(64);
    expect(ks.certificate.username).toBe("alice");
  });

  it("rejects a wrong passphrase", async () => {
    await expect(importKeystore(keystoreText, "nope")).rejects.toThrow(/passphrase/);
  });
});

describe("certificate digest", () => {
  it("matches the node's digest", async () => {
    const ks = await importKeystore(keystoreText, PASSPHRASE);
    const ours = hexEncode(await certificateDigest(ks.certificate));
    const theirs = await python(
      "from quarks.keystore import ClientKeystore\n" +
        `ks = ClientKeystore.load(${JSON.stringify(keystorePath)}, ${JSON.stringify(PASSPHRASE)})\n` +
        "print(ks.certificate.digest().hex())",
    );
    expect(theirs).toBe(ours);
  });
});

describe("sealed channel keys", () => {
  it("opens a blob the CLI side sealed", async () => {
    const ks = await importKeystore(keystoreText, PASSPHRASE);
    const out = await python(
      "import os\n" +
        "from quarks import crypto, wire\n" +
        "from quarks.keystore import ClientKeystore\n" +
        `ks = ClientKeystore.load(${JSON.stringify(keystorePath)}, ${JSON.stringify(PASSPHRASE)})\n` +
        "secret = os.urandom(32)\n" +
        "sealed = crypto.seal_to_public_key(ks.keypair.public_key, secret)\n" +
        "print(wire.b64e(secret)); print(wire.b64e(sealed))",
    );
    const [secretB64, sealedB64] = out.split("\n");
    const opened = await openWithPrivateKey(
      ks.privateKey,
      ks.publicKey,
      b64decode(sealedB64),
    );
    expect(b64encode(opened)).toBe(secretB64);
  });

  it("seals a blob the CLI side can open", async () => {
    const ks = await importKeystore(keystoreText, PASSPHRASE);
    const secret = crypto.getRandomValues(new Uint8Array(32));
    const sealed = await sealToPublicKey(ks.publicKey, secret);
    const opened = await python(
      "import sys\n" +
        "from quarks import crypto, wire\n" +
        "from quarks.keystore import ClientKeystore\n" +
        `ks = ClientKeystore.load(${JSON.stringify(keystorePath)}, ${JSON.stringify(PASSPHRASE)})\n` +
        "sealed = wire.b64d(sys.stdin.read().strip())\n" +
        "print(wire.b64e(crypto.open_with_private_key(ks.keypair.private_key, sealed)))",
      b64encode(sealed),
    );
    expect(opened).toBe(b64encode(secret));
  });

  it("rejects a tampered sealed blob", async () => {
    const ks = await importKeystore(keystoreText, PASSPHRASE);
    const sealed = await sealToPublicKey(ks.publicKey, new Uint8Array(32));
    sealed[sealed.length - 1] ^= 0xff;
    await expect(
      openWithPrivateKey(ks.privateKey, ks.publicKey, sealed),
    ).rejects.toThrow(/authentication/);
  });
});

describe("message encryption", () => {
  it("round-trips with the CLI cipher", async () => {
    const key = crypto.getRandomValues(new Uint8Array(32));
    const ct = await encryptMessage(key, utf8Encode("browser → node"));
    const theirs = await python(
      "import sys\n" +
        "from quarks import crypto, wire\n" +
        "key, ct = sys.stdin.read().split()\n" +
        "print(crypto.decrypt_message(wire.b64d(key), wire.b64d(ct)).decode('utf-8'))",
      `${b64encode(key)} ${b64encode(ct)}`,
    );
    expect(theirs).toBe("browser → node");

    const fromPython = await python(
      "import sys\n" +
        "from quarks import crypto, wire\n" +
        "key = wire.b64d(sys.stdin.read().strip())\n" +
        "print(wire.b64e(crypto.encrypt_message(key, 'node → browser'.encode('utf-8'))))",
      b64encode(key),
    );
    const opened = await decryptMessage(key, b64decode(fromPython));
    expect(new TextDecoder().decode(opened)).toBe("node → browser");
  });
});
