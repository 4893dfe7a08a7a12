import { FeedbackApi } from "./api.js";
import { LabelingApp } from "./app.js";

const root = document.getElementById("app");
if (root) {
    const app = new LabelingApp(new FeedbackApi(""), root);
    void app.start();
}
