import { SessionStore, SURVEY_ITEMS } from "./session.js";

// Question wording is client-local; the wire carries only the answers,
// in this fixed item order.
export const QUESTIONS = [
  "The partner adapted to what I was doing.",
  "The partner behaved consistently.",
  "We coordinated well as a team.",
  "I enjoyed playing with this partner.",
  "Playing with this partner was frustrating.",
  "The partner's actions were helpful.",
  "I would trust this partner in future rounds.",
];

/** Build the 7-item Likert form into `root`. Submit stays disabled
 * until every item has an answer; onSubmit fires at most once. */
export function buildSurveyForm(root: HTMLElement, store: SessionStore,
                                onSubmit: (msg: object) => void): void {
  root.innerHTML = "";
  const heading = document.createElement("p");
  heading.textContent =
    `Round finished with score ${store.lastScore}. ` +
    "Rate the partner (1 = not at all, 7 = very much):";
  root.appendChild(heading);

  const submit = document.createElement("button");
  submit.textContent = "submit ratings";
  submit.disabled = true;

  for (let item = 0; item < SURVEY_ITEMS; item++) {
    const row = document.createElement("div");
    row.className = "survey-row";
    const label = document.createElement("span");
    label.textContent = QUESTIONS[item];
    row.appendChild(label);
    const group = document.createElement("span");
    for (let value = 1; value <= 7; value++) {
      const wrap = document.createElement("label");
      const radio = document.createElement("input");
      radio.type = "radio";
      radio.name = `q${item}`;
      radio.value = String(value);
      radio.addEventListener("change", () => {
        store.setAnswer(item, value);
        submit.disabled = !store.surveyComplete();
      });
      wrap.appendChild(radio);
      wrap.appendChild(document.createTextNode(String(value)));
      group.appendChild(wrap);
    }
    row.appendChild(group);
    root.appendChild(row);
  }

  submit.addEventListener("click", () => {
    const msg = store.takeSurvey();
    if (msg === null) return;
    submit.disabled = true;
    onSubmit(msg);
    root.innerHTML = "<p>Thanks! Waiting for the next round…</p>";
  });
  root.appendChild(submit);
}
