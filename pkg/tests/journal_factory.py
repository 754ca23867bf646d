"""Hand-built journals for scoring tests."""

import random

from rangeforge.corpus import SampleRecord, SampleSet
from rangeforge.journal import RunJournal


def outcome_journal(rows, nodes=("n0", "n1")):
    """rows: (sample_id, status, det) with det None or (stage, t_det_s); cpu_s=1.5 each."""
    j = RunJournal({"run": "hand", "detector_name": "hand"})
    t = 0.0
    for i, (sid, status, det) in enumerate(rows):
        node = nodes[i % len(nodes)]
        trial = f"main:{sid}#1"
        base = {"phase": "main", "trial": trial, "sample": sid, "attempt": 1}
        t += 1.0
        if status == "Incomplete":
            j.emit("transition", t, {**base, "from": "Crashed", "to": "Incomplete"}, node)
            continue
        if det is not None:
            j.emit("determination", t, {**base, "stage": det[0], "t_det_s": det[1], "verdict": "malicious",
                                        "action": "flagged", "path": "model", "cpu_s": 1.5, "peak_mem_mb": 9.0}, node)
        j.emit("transition", t, {**base, "from": "Collecting", "to": "Reverting", "cpu_s": 1.5, "peak_mem_mb": 9.0}, node)
        j.emit("transition", t + 0.5, {**base, "from": "Reverting", "to": "Done"}, node)
    j.close()
    return j


def random_case(seed, n=None):
    rnd = random.Random(seed)
    n = n or rnd.randint(1, 60)
    samples, rows = [], []
    types = ["exe", "doc", "iso"]
    for i in range(n):
        label = rnd.choice(["benign", "malicious"])
        zero = label == "malicious" and rnd.random() < 0.2
        s = SampleRecord(f"s{i:03d}", rnd.choice(types), label, zero, 1, f"d{i}")
        samples.append(s)
        status = "Incomplete" if rnd.random() < 0.05 else "Done"
        det = None
        if status == "Done" and rnd.random() < 0.5:
            det = rnd.choice([("static", round(rnd.uniform(0, 92), 6)), ("dynamic", round(rnd.uniform(92, 152), 6))])
        rows.append((s.sample_id, status, det))
    return SampleSet(tuple(samples), seed, None, 0.5), rows
