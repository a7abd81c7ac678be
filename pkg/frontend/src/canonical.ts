// Canonical JSON, byte-compatible with the node's signing rules:
// sorted keys, no whitespace, ASCII-only with \uXXXX escapes, integers
// only.  Timestamps exceed Number.MAX_SAFE_INTEGER, so integer fields
// may be bigint.

export type CanonicalValue =
  | string
  | number
  | bigint
  | boolean
  | null
  | CanonicalValue[]
  | { [key: string]: CanonicalValue };

export function canonicalJson(value: CanonicalValue): string {
  if (value === null) return "null";
  if (typeof value === "boolean") return value ? "true" : "false";
  if (typeof value === "bigint") return value.toString();
  if (typeof value === "number") {
    if (!Number.isInteger(value)) {
      throw new Error("canonical JSON allows integers only");
    }
    if (!Number.isSafeInteger(value)) {
      throw new Error("integer exceeds safe range; use bigint");
    }
    return value.toString();
  }
  if (typeof value === "string") return escapeString(value);
  if (Array.isArray(value)) {
    return "[" + value.map(canonicalJson).join(",") + "]";
  }
  const keys = Object.keys(value).sort();
  const parts = keys.map((k) => escapeString(k) + ":" + canonicalJson(value[k]));
  return "{" + parts.join(",") + "}";
}

// Matches Python's json.dumps(ensure_ascii=True) escaping exactly:
// short escapes for the usual control characters, \uXXXX (lowercase
// hex, UTF-16 code units) for everything else outside printable ASCII.
function escapeString(text: string): string {
  let out = '"';
  for (let i = 0; i < text.length; i++) {
    const ch = text[i];
    const code = text.charCodeAt(i);
    switch (ch) {
      case '"':
        out += '\\"';
        continue;
      case "\\":
        out += "\\\\";
        continue;
      case "\b":
        out += "\\b";
        continue;
      case "\f":
        out += "\\f";
        continue;
      case "\n":
        out += "\\n";
        continue;
      case "\r":
        out += "\\r";
        continue;
      case "\t":
        out += "\\t";
        continue;
    }
    if (code < 0x20 || code > 0x7e) {
      out += "\\u" + code.toString(16).padStart(4, "0");
    } else {
      out += ch;
    }
  }
  return out + '"';
}
