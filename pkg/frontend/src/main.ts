/**
 * Entry point: read the access token, probe /api/progress to decide
 * whether this token is a rater or the admin, and mount the matching
 * screen.
 */

import { AnnotationClient, isAdminProgress } from './api.js';
import { renderAdminView } from './admin-view.js';
import { renderRatingView } from './rating-view.js';
import { RatingSession } from './session.js';

function readToken(): string {
  const stored = window.sessionStorage.getItem('annotation-token');
  if (stored) return stored;
  const entered = window.prompt('Access token:') ?? '';
  window.sessionStorage.setItem('annotation-token', entered);
  return entered;
}

export async function mount(root: HTMLElement, client: AnnotationClient): Promise<void> {
  const probe = await client.progress();
  if (isAdminProgress(probe)) {
    renderAdminView(root, client);
  } else {
    const session = new RatingSession(client);
    renderRatingView(root, session);
    await session.start();
  }
}

if (typeof document !== 'undefined' && document.getElementById('app') !== null) {
  const client = new AnnotationClient(readToken());
  void mount(document.getElementById('app')!, client);
}
