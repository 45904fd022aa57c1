"""Listening-test administration end to end.

Builds the full-scale plan (4800 stimuli -> 120 sets of 40, five listeners
per set, ten sets per listener, 60 listeners), runs one simulated listener
through part of a smaller plan, then kills the in-memory service and proves
that replaying the append-only log restores the cursor and the export.
"""

import os
import tempfile

from spkaug import listentest as lt
from spkaug.evaluation import DIALECT_CATEGORIES


def stimuli(n):
    return [lt.Stimulus(f"s{i:05d}", f"u{i}", f"sys{i % 20}",
                        ["train", "dev", "test"][i % 3],
                        f"audio/{i}.wav", f"ref/{i}.wav",
                        DIALECT_CATEGORIES[i % 6])
            for i in range(n)]


full = lt.build_plan(stimuli(4800), set_size=40, listeners_per_set=5,
                     sets_per_listener=10, n_listeners=60, seed=1)
print(f"full-scale plan: {len(full.sets)} sets, {len(full.listeners)} listeners, "
      f"{sum(len(v) for v in full.assignments.values())} set-assignments")

store = os.path.join(tempfile.mkdtemp(prefix="listentest_"), "log.jsonl")
small = lt.build_plan(stimuli(80), set_size=40, listeners_per_set=1,
                      sets_per_listener=2, n_listeners=1, seed=2)
service = lt.ListenService(small, store)
service.create_session("L001")
for k in range(25):
    step = service.next_stimulus("L001")
    service.record_rating("L001", step["stimulus_id"], 1 + k % 5, 1 + k % 5,
                          DIALECT_CATEGORIES[k % 6], token=f"t{k}")
print(f"recorded 25 ratings; cursor now {service.cursors()['L001']}")
export_before = service.export_csv()
service.close()  # "crash"

recovered = lt.ListenService(small, store)
print(f"after log replay: cursor {recovered.cursors()['L001']}, "
      f"export identical: {recovered.export_csv() == export_before}")
recovered.close()
