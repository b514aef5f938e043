/** Entry point: find the page regions and boot the controller. */

import { ChatApp } from "./app.js";
import { RolecraftClient } from "./api.js";

function region(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing page region #${id}`);
  return el;
}

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("api") ?? "http://127.0.0.1:8023";

const app = new ChatApp(new RolecraftClient(baseUrl), {
  personas: region("personas"),
  conversation: region("conversation"),
  send: region("send"),
  config: region("config"),
  editor: region("editor"),
  status: region("status"),
});

void app.start();
