// Session controller: drives next-stimulus -> play -> rate -> submit until
// the server reports done. All progress state lives on the server, so a page
// reload resumes at the server cursor; submissions carry a per-stimulus
// token and are retried with the same token on network failure.

import { ApiClient, RatingResult, StimulusStep } from "./api.js";
import { RatingForm } from "./form.js";

export interface AudioPlayer {
  play(url: string): Promise<void>;
}

export interface SessionView {
  showStimulus?(step: StimulusStep): void;
  showProgress?(index: number, total: number): void;
  showDone?(): void;
  showError?(message: string): void;
}

function defaultToken(stimulusId: string): string {
  return `${stimulusId}-${Math.random().toString(36).slice(2, 10)}`;
}

export class SessionController {
  readonly form = new RatingForm();
  private current: StimulusStep | null = null;
  private token = "";
  sessionId = "";
  total = 0;
  cursor = 0;
  done = false;

  constructor(
    private readonly api: ApiClient,
    private readonly player: AudioPlayer,
    private readonly view: SessionView = {},
    private readonly makeToken: (stimulusId: string) => string = defaultToken,
  ) {}

  async start(listenerId: string): Promise<void> {
    const info = await this.api.createSession(listenerId);
    this.sessionId = info.session_id;
    this.total = info.total;
    this.cursor = info.cursor;
    this.done = info.status === "complete";
    if (!this.done) {
      await this.advance();
    } else {
      this.view.showDone?.();
    }
  }

  get stimulus(): StimulusStep | null {
    return this.current;
  }

  async advance(): Promise<void> {
    const step = await this.api.nextStimulus(this.sessionId);
    if (step.done) {
      this.done = true;
      this.current = null;
      this.view.showDone?.();
      return;
    }
    this.current = step;
    this.cursor = step.index ?? this.cursor;
    this.form.reset();
    this.token = this.makeToken(step.stimulus_id!);
    this.view.showStimulus?.(step);
    this.view.showProgress?.(step.index ?? 0, step.total ?? this.total);
  }

  async playStimulus(): Promise<void> {
    if (!this.current?.audio_url) {
      throw new Error("no stimulus loaded");
    }
    await this.player.play(this.current.audio_url);
    this.form.markPlayed();
  }

  async playReference(): Promise<void> {
    if (!this.current?.reference_url) {
      throw new Error("no stimulus loaded");
    }
    // reference playback informs DMOS; it does not gate submission
    await this.player.play(this.current.reference_url);
  }

  get canSubmit(): boolean {
    return this.current !== null && !this.done && this.form.canSubmit;
  }

  async submit(maxAttempts = 3): Promise<RatingResult> {
    if (!this.canSubmit || !this.current) {
      throw new Error("submission blocked: play the audio and fill all three ratings");
    }
    const payload = {
      stimulus_id: this.current.stimulus_id!,
      mos: this.form.mos!,
      dmos: this.form.dmos!,
      dialect_choice: this.form.dialect!,
      token: this.token,
    };
    let lastError: unknown = null;
    for (let attempt = 0; attempt < maxAttempts; attempt++) {
      try {
        // retries reuse the same token, so the server deduplicates
        const result = await this.api.submitRating(this.sessionId, payload);
        if (result.accepted) {
          this.cursor += result.duplicate ? 0 : 1;
          await this.advance();
        } else {
          this.view.showError?.(result.reason ?? "rating rejected");
        }
        return result;
      } catch (err) {
        lastError = err;
      }
    }
    this.view.showError?.(`submission failed after ${maxAttempts} attempts`);
    throw lastError;
  }

  /** Scripted run: plays each stimulus and submits the given ratings. */
  async runScripted(
    rate: (step: StimulusStep, index: number) => { mos: number; dmos: number; dialect: string },
  ): Promise<number> {
    let submitted = 0;
    while (!this.done && this.current) {
      await this.playStimulus();
      const judgment = rate(this.current, this.cursor);
      this.form.setMos(judgment.mos);
      this.form.setDmos(judgment.dmos);
      this.form.setDialect(judgment.dialect);
      const result = await this.submit();
      if (!result.accepted) {
        throw new Error(`rating rejected: ${result.reason}`);
      }
      submitted += 1;
    }
    return submitted;
  }
}
