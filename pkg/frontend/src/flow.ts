// Participant flow: consent/meta form, practice trials, condition blocks
// with rest screens between trials, completion. No success or failure
// feedback is ever surfaced; participants only ever see "trial over".

import { SessionDescriptor } from "./client";

export type FlowStage =
  | { kind: "meta" }
  | { kind: "practice"; remaining: number }
  | { kind: "trial"; condition: string }
  | { kind: "complete" };

export class ParticipantFlow {
  practiceTarget: number;
  practiceDone = 0;
  private started = false;

  constructor(practiceTarget = 2) {
    this.practiceTarget = practiceTarget;
  }

  begin(): void {
    this.started = true;
  }

  stage(descriptor: SessionDescriptor | null): FlowStage {
    if (!this.started || descriptor === null) {
      return { kind: "meta" };
    }
    if (descriptor.progress.complete) {
      return { kind: "complete" };
    }
    if (this.practiceDone < this.practiceTarget) {
      return { kind: "practice", remaining: this.practiceTarget - this.practiceDone };
    }
    return { kind: "trial", condition: descriptor.next_condition ?? "control" };
  }

  recordPractice(): void {
    this.practiceDone += 1;
  }
}
