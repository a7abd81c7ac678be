// DOM glue.  All protocol and crypto logic lives in Session; this file
// only moves data between the page and the session object.

import { exportKeystore } from "./keystore.js";
import { DecryptedMessage, PollResult, Session } from "./session.js";

const POLL_INTERVAL_MS = 2000;

let session: Session | null = null;
let activeChannel: string | null = null;
let pollTimer: number | null = null;
let pollInFlight = false;
let thread: (DecryptedMessage | { marker: string; key: string })[] = [];

function el<T extends HTMLElement>(id: string): T {
  return document.getElementById(id) as T;
}

function show(id: string, visible: boolean): void {
  el(id).classList.toggle("hidden", !visible);
}

function setStatus(text: string, isError = false): void {
  const node = el("status");
  node.textContent = text;
  node.classList.toggle("error", isError);
}

// -- login ------------------------------------------------------------------

async function onLogin(): Promise<void> {
  const fileInput = el<HTMLInputElement>("keystore-file");
  const passInput = el<HTMLInputElement>("passphrase");
  const file = fileInput.files?.[0];
  if (!file) {
    setStatus("choose a keystore file", true);
    return;
  }
  try {
    session = await Session.login(await file.text(), passInput.value);
  } catch (e) {
    session = null;
    setStatus(e instanceof Error ? e.message : String(e), true);
    return;
  }
  passInput.value = "";
  el("whoami").textContent = `${session.username} @ ${session.nodeAddress}`;
  show("login-panel", false);
  show("main-panel", true);
  setStatus("");
  renderChannelList();
}

// -- channel list -----------------------------------------------------------

function renderChannelList(): void {
  if (!session) return;
  const list = el("channel-list");
  list.innerHTML = "";
  for (const { channelId, name } of session.channels()) {
    const item = document.createElement("li");
    const button = document.createElement("button");
    button.textContent = name ?? channelId.slice(0, 12) + "…";
    button.title = channelId;
    button.className = channelId === activeChannel ? "channel active" : "channel";
    button.onclick = () => activateChannel(channelId);
    item.appendChild(button);
    list.appendChild(item);
  }
}

async function onJoin(): Promise<void> {
  if (!session) return;
  const input = el<HTMLInputElement>("join-channel-id");
  const channelId = input.value.trim();
  if (!channelId) return;
  try {
    await session.fetchChannelKey(channelId);
    input.value = "";
    renderChannelList();
    activateChannel(channelId);
    setStatus("channel key fetched and cached in memory");
  } catch (e) {
    setStatus(e instanceof Error ? e.message : String(e), true);
  }
}

function activateChannel(channelId: string): void {
  activeChannel = channelId;
  thread = [];
  el("thread").innerHTML = "";
  renderChannelList();
  show("channel-panel", true);
  el("channel-heading").textContent =
    session?.channels().find((c) => c.channelId === channelId)?.name ?? channelId;
  restartPolling();
}

// -- thread -----------------------------------------------------------------

function restartPolling(): void {
  if (pollTimer !== null) {
    clearInterval(pollTimer);
  }
  void pollOnce();
  pollTimer = setInterval(() => void pollOnce(), POLL_INTERVAL_MS) as unknown as number;
}

async function pollOnce(): Promise<void> {
  if (!session || !activeChannel || pollInFlight) return;
  pollInFlight = true;
  try {
    const result = await session.poll(activeChannel);
    appendToThread(result);
    setStatus("");
  } catch (e) {
    setStatus(e instanceof Error ? e.message : String(e), true);
  } finally {
    pollInFlight = false;
  }
}

function appendToThread(result: PollResult): void {
  const merged: typeof thread = [
    ...result.messages,
    ...result.failures.map((f) => ({
      marker: `undecryptable entry (${f.error})`,
      key: f.key,
    })),
  ];
  merged.sort((a, b) => (a.key < b.key ? -1 : a.key > b.key ? 1 : 0));
  thread.push(...merged);
  renderThread();
}

function renderThread(): void {
  if (!session || !activeChannel) return;
  const container = el("thread");
  container.innerHTML = "";
  for (const entry of thread) {
    const row = document.createElement("div");
    if ("marker" in entry) {
      row.className = "message undecryptable";
      row.textContent = `⚠ ${entry.marker}`;
    } else {
      row.className =
        entry.sender === session.username ? "message own" : "message";
      const meta = document.createElement("span");
      meta.className = "meta";
      const when = new Date(Number(entry.ledgerTimestamp / 1_000_000n));
      meta.textContent = `${entry.sender} · ${when.toLocaleTimeString()}`;
      const body = document.createElement("span");
      body.className = "text";
      body.textContent = entry.text;
      row.append(meta, body);
    }
    container.appendChild(row);
  }
  for (const echo of session.pendingFor(activeChannel)) {
    const row = document.createElement("div");
    row.className = "message own pending";
    row.textContent = `${echo.text} (sending…)`;
    container.appendChild(row);
  }
  container.scrollTop = container.scrollHeight;
}

async function onSend(): Promise<void> {
  if (!session || !activeChannel) return;
  const input = el<HTMLTextAreaElement>("compose");
  const text = input.value.trim();
  if (!text) {
    setStatus("message is empty", true);
    return;
  }
  const sendButton = el<HTMLButtonElement>("send-button");
  sendButton.disabled = true;
  try {
    await session.send(activeChannel, text);
    input.value = "";
    renderThread();
    setStatus("");
    void pollOnce();
  } catch (e) {
    // Text stays in the box so nothing is lost; the button re-enables
    // as the retry affordance.
    setStatus(`send failed: ${e instanceof Error ? e.message : e} — press send to retry`, true);
  } finally {
    sendButton.disabled = false;
  }
}

// -- management forms ---------------------------------------------------------

async function onAddMember(): Promise<void> {
  if (!session || !activeChannel) return;
  const username = el<HTMLInputElement>("member-username").value.trim();
  const nodeAddress = el<HTMLInputElement>("member-node").value.trim();
  if (!username || !nodeAddress) {
    setStatus("member username and node address are required", true);
    return;
  }
  try {
    await session.addMember(activeChannel, username, nodeAddress);
    setStatus(`added ${username}@${nodeAddress} to the channel`);
  } catch (e) {
    setStatus(e instanceof Error ? e.message : String(e), true);
  }
}

async function onAddNode(): Promise<void> {
  if (!session || !activeChannel) return;
  const nodeAddress = el<HTMLInputElement>("federate-node").value.trim();
  if (!nodeAddress || !nodeAddress.includes(":")) {
    setStatus("enter the new node as host:port", true);
    return;
  }
  try {
    await session.addNode(activeChannel, nodeAddress);
    setStatus(`federated ${nodeAddress} into the channel`);
  } catch (e) {
    setStatus(e instanceof Error ? e.message : String(e), true);
  }
}

async function onExportKeystore(): Promise<void> {
  if (!session) return;
  const passphrase = el<HTMLInputElement>("export-passphrase").value;
  if (!passphrase) {
    setStatus("enter a passphrase to encrypt the keystore", true);
    return;
  }
  const text = await exportKeystore(session.keystore, passphrase);
  const blob = new Blob([text], { type: "application/json" });
  const link = document.createElement("a");
  link.href = URL.createObjectURL(blob);
  link.download = `${session.username}.keystore`;
  link.click();
  URL.revokeObjectURL(link.href);
}

export function init(): void {
  el("login-button").onclick = () => void onLogin();
  el("join-button").onclick = () => void onJoin();
  el("send-button").onclick = () => void onSend();
  el<HTMLTextAreaElement>("compose").onkeydown = (event) => {
    if (event.key === "Enter" && !event.shiftKey) {
      event.preventDefault();
      void onSend();
    }
  };
  el("add-member-button").onclick = () => void onAddMember();
  el("federate-button").onclick = () => void onAddNode();
  el("export-button").onclick = () => void onExportKeystore();
}

init();
