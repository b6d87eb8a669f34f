/**
 * Admin dashboard: one progress bar per rater plus an export control
 * that downloads the newline-delimited JSON annotations file.
 */

import { AdminProgress, AnnotationClient } from './api.js';

export function renderAdminView(root: HTMLElement, client: AnnotationClient): void {
  root.innerHTML = `
    <main class="admin">
      <h1>Annotation progress</h1>
      <div id="raters"></div>
      <button id="refresh" type="button">Refresh</button>
      <button id="export" type="button">Export annotations</button>
      <div id="status" class="status"></div>
    </main>`;

  const ratersEl = root.querySelector<HTMLElement>('#raters')!;
  const statusEl = root.querySelector<HTMLElement>('#status')!;

  async function refresh(): Promise<void> {
    try {
      const overview = (await client.progress()) as AdminProgress;
      ratersEl.innerHTML = '';
      for (const p of overview.raters) {
        const pct = p.total === 0 ? 0 : Math.round((100 * p.rated) / p.total);
        const row = document.createElement('div');
        row.className = 'rater-row';
        row.innerHTML = `
          <span class="rater-name"></span>
          <progress max="${p.total}" value="${p.rated}"></progress>
          <span class="rater-count">${p.rated}/${p.total} (${pct}%)</span>`;
        row.querySelector<HTMLElement>('.rater-name')!.textContent = p.rater;
        ratersEl.appendChild(row);
      }
      statusEl.textContent = '';
    } catch (err) {
      statusEl.textContent = `Error: ${err instanceof Error ? err.message : String(err)}`;
    }
  }

  root.querySelector<HTMLButtonElement>('#refresh')!.addEventListener('click', () => {
    void refresh();
  });

  root.querySelector<HTMLButtonElement>('#export')!.addEventListener('click', () => {
    void (async () => {
      try {
        const ndjson = await client.exportAnnotations();
        const blob = new Blob([ndjson], { type: 'application/x-ndjson' });
        const link = document.createElement('a');
        link.href = URL.createObjectURL(blob);
        link.download = 'annotations.jsonl';
        link.click();
        URL.revokeObjectURL(link.href);
        statusEl.textContent = `Exported ${ndjson.split('\n').filter(Boolean).length} annotations.`;
      } catch (err) {
        statusEl.textContent = `Error: ${err instanceof Error ? err.message : String(err)}`;
      }
    })();
  });

  void refresh();
}
