/** Browser entry point. The API origin defaults to the page's own host and
 * can be overridden with ?api=http://host:port for development. */

import { ApiClient } from "./api.js";
import { buildApp } from "./app.js";

const params = new URLSearchParams(window.location.search);
const base = params.get("api") ?? "";

const app = buildApp(document, new ApiClient(base));
void app.loadModels();
