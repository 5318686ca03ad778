import { mountConsole } from "./ui.js";

const params = new URLSearchParams(window.location.search);
const url = params.get("server") ?? "ws://127.0.0.1:8700/session";
mountConsole(document.getElementById("app") as HTMLElement, url);
