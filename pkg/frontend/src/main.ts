import { mountApp } from "./ui";

const root = document.getElementById("app");
if (root === null) throw new Error("missing #app mount point");

// same-origin by default: the bundle is meant to be served by the backend
mountApp(root, "");
