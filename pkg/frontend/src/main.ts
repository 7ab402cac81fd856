import { ReceiverApi } from "./api.js";
import { Dashboard } from "./dashboard.js";

const root = document.getElementById("app");
if (root === null) {
  throw new Error("missing #app container");
}
const dashboard = new Dashboard(root, new ReceiverApi());
dashboard.start();
