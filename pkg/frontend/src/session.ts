/**
 * Rating-session state machine, independent of the DOM.
 *
 * Invariants enforced here rather than in the view layer:
 *  - submission is gated until a label has been selected;
 *  - a conflict response (someone already rated this task, e.g. a second
 *    tab) advances to the next task without dropping anything, since the
 *    server already holds the accepted rating;
 *  - the queue-exhausted state is terminal.
 */

import {
  AnnotationClient,
  AnnotationTask,
  ApiError,
  Progress,
  SentimentLabel,
} from './api.js';

export type SessionPhase = 'loading' | 'rating' | 'done' | 'error';

export interface SessionState {
  phase: SessionPhase;
  task: AnnotationTask | null;
  selected: SentimentLabel | null;
  progress: Progress | null;
  notice: string | null;
  errorMessage: string | null;
}

export type Listener = (state: SessionState) => void;

export class RatingSession {
  private state: SessionState = {
    phase: 'loading',
    task: null,
    selected: null,
    progress: null,
    notice: null,
    errorMessage: null,
  };
  private listeners: Listener[] = [];
  private submitting = false;

  constructor(private readonly client: AnnotationClient) {}

  getState(): SessionState {
    return { ...this.state };
  }

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
    listener(this.getState());
  }

  private update(patch: Partial<SessionState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) listener(this.getState());
  }

  async start(): Promise<void> {
    await this.loadNext(null);
  }

  private async loadNext(notice: string | null): Promise<void> {
    this.update({ phase: 'loading', selected: null, notice });
    try {
      const resp = await this.client.nextTask();
      if (resp.task === null) {
        this.update({ phase: 'done', task: null, progress: resp.progress ?? this.state.progress });
      } else {
        this.update({ phase: 'rating', task: resp.task, progress: resp.task.progress });
      }
    } catch (err) {
      this.fail(err);
    }
  }

  select(label: SentimentLabel): void {
    if (this.state.phase !== 'rating') return;
    this.update({ selected: label, notice: null });
  }

  get canSubmit(): boolean {
    return this.state.phase === 'rating' && this.state.selected !== null && !this.submitting;
  }

  async submit(): Promise<void> {
    if (!this.canSubmit || this.state.task === null || this.state.selected === null) return;
    this.submitting = true;
    const { task, selected } = this.state;
    try {
      const resp = await this.client.submitRating(task.task_id, selected);
      this.update({ progress: resp.progress });
      await this.loadNext(null);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // already rated elsewhere; the accepted rating is safe server-side
        await this.loadNext('That abstract was already rated; moved to the next one.');
      } else {
        this.fail(err);
      }
    } finally {
      this.submitting = false;
    }
  }

  private fail(err: unknown): void {
    const message = err instanceof Error ? err.message : String(err);
    this.update({ phase: 'error', errorMessage: message });
  }
}
