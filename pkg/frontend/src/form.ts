// Rating form state machine. Submission is possible only after the stimulus
// audio has been played at least once and all three judgments are selected.

export const MOS_SCALE = [1, 2, 3, 4, 5] as const;
export const DIALECT_CHOICES = [
  "American",
  "Canadian",
  "English",
  "Irish",
  "Northern Irish",
  "Scottish",
] as const;

export type DialectChoice = (typeof DIALECT_CHOICES)[number];

export class RatingForm {
  mos: number | null = null;
  dmos: number | null = null;
  dialect: DialectChoice | null = null;
  private played = false;

  markPlayed(): void {
    this.played = true;
  }

  get hasPlayed(): boolean {
    return this.played;
  }

  setMos(value: number): void {
    if (!MOS_SCALE.includes(value as (typeof MOS_SCALE)[number])) {
      throw new Error(`MOS must be 1..5, got ${value}`);
    }
    this.mos = value;
  }

  setDmos(value: number): void {
    if (!MOS_SCALE.includes(value as (typeof MOS_SCALE)[number])) {
      throw new Error(`DMOS must be 1..5, got ${value}`);
    }
    this.dmos = value;
  }

  setDialect(value: string): void {
    if (!DIALECT_CHOICES.includes(value as DialectChoice)) {
      throw new Error(`unknown dialect choice: ${value}`);
    }
    this.dialect = value as DialectChoice;
  }

  get canSubmit(): boolean {
    return this.played && this.mos !== null && this.dmos !== null && this.dialect !== null;
  }

  reset(): void {
    this.mos = null;
    this.dmos = null;
    this.dialect = null;
    this.played = false;
  }
}
