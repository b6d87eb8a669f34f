/**
 * Rating screen: abstract text, three label buttons, submit.
 *
 * Blinding note: only fields from the task payload (abstract text and
 * progress counts) ever reach the DOM. Titles, journals, years, and
 * PMIDs are not in the payload and must never be rendered.
 */

import { LABELS, SentimentLabel } from './api.js';
import { RatingSession, SessionState } from './session.js';

const KEY_TO_LABEL: Record<string, SentimentLabel> = {
  '1': 'POSITIVE',
  '2': 'NEGATIVE',
  '3': 'NEUTRAL',
};

const LABEL_TITLES: Record<SentimentLabel, string> = {
  POSITIVE: 'Positive (1)',
  NEGATIVE: 'Negative (2)',
  NEUTRAL: 'Neutral (3)',
};

export function renderRatingView(root: HTMLElement, session: RatingSession): void {
  root.innerHTML = `
    <main class="rating">
      <div id="progress" class="progress"></div>
      <div id="notice" class="notice" hidden></div>
      <article id="abstract" class="abstract"></article>
      <div id="labels" class="labels"></div>
      <button id="submit" type="button" disabled>Submit (Enter)</button>
      <div id="status" class="status"></div>
    </main>`;

  const abstractEl = root.querySelector<HTMLElement>('#abstract')!;
  const labelsEl = root.querySelector<HTMLElement>('#labels')!;
  const submitEl = root.querySelector<HTMLButtonElement>('#submit')!;
  const progressEl = root.querySelector<HTMLElement>('#progress')!;
  const noticeEl = root.querySelector<HTMLElement>('#notice')!;
  const statusEl = root.querySelector<HTMLElement>('#status')!;

  for (const label of LABELS) {
    const button = document.createElement('button');
    button.type = 'button';
    button.dataset.label = label;
    button.textContent = LABEL_TITLES[label];
    button.addEventListener('click', () => {
      session.select(label);
    });
    labelsEl.appendChild(button);
  }

  submitEl.addEventListener('click', () => {
    void session.submit();
  });

  root.ownerDocument.addEventListener('keydown', (event: KeyboardEvent) => {
    const label = KEY_TO_LABEL[event.key];
    if (label !== undefined) {
      session.select(label);
    } else if (event.key === 'Enter' && session.canSubmit) {
      void session.submit();
    }
  });

  session.subscribe((state: SessionState) => {
    noticeEl.hidden = state.notice === null;
    noticeEl.textContent = state.notice ?? '';

    if (state.progress !== null) {
      progressEl.textContent = `Rated ${state.progress.rated} of ${state.progress.total}`;
    }

    switch (state.phase) {
      case 'loading':
        statusEl.textContent = 'Loading…';
        submitEl.disabled = true;
        break;
      case 'rating':
        statusEl.textContent = '';
        abstractEl.textContent = state.task?.abstract ?? '';
        submitEl.disabled = state.selected === null;
        break;
      case 'done':
        abstractEl.textContent = '';
        labelsEl.hidden = true;
        submitEl.hidden = true;
        statusEl.textContent = 'All abstracts rated. Thank you.';
        break;
      case 'error':
        statusEl.textContent = `Error: ${state.errorMessage ?? 'unknown'}`;
        submitEl.disabled = true;
        break;
    }

    for (const button of labelsEl.querySelectorAll<HTMLButtonElement>('button')) {
      button.classList.toggle('selected', button.dataset.label === state.selected);
    }
  });
}
