"""Synthetic verifiable reasoning tasks with gold step-by-step rationales.

Three families, all encoded with the standard single-character vocabulary:

- chain_add:     "^3+5+2+4=?"   answer "14$",  steps "3+5=8#", "8+2=10#", ...
- modular_chain: "^3+5+2+4%7=?" answer "0$",   running sum reduced mod m each step
- compare_chain: "^3+5+2?9=?"   answer ">$",   fold the sum, then compare to the
                                               threshold in a final "10?9=>#" step

Difficulty is the number of rationale steps. Each step is a local rewrite of
the previous accumulator, so a short-window policy can in principle carry the
computation forward through its own emitted tokens. The gold rationale is for
corpus construction and debugging only; training sees just prompt, verifier
and answer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .vocab import Vocab, standard_vocab

TASK_KINDS = ("chain_add", "modular_chain", "compare_chain")

MIN_DIFFICULTY = 2
MAX_DIFFICULTY = 8

_VOCAB = standard_vocab()


@dataclass(frozen=True)
class Problem:
    """One generated task instance. problem_id equals the generation seed."""

    problem_id: int
    task_kind: str
    difficulty: int
    prompt_ids: tuple[int, ...]
    gold_answer_ids: tuple[int, ...]
    gold_steps: tuple[tuple[int, ...], ...]

    def prompt_text(self, vocab: Vocab = _VOCAB) -> str:
        return vocab.decode(self.prompt_ids)

    def answer_text(self, vocab: Vocab = _VOCAB) -> str:
        return vocab.decode(self.gold_answer_ids)

    def step_texts(self, vocab: Vocab = _VOCAB) -> list[str]:
        return [vocab.decode(step) for step in self.gold_steps]

    def gold_response_ids(self) -> tuple[int, ...]:
        """Gold rationale plus delimiter and answer; verifies to 1."""
        flat: list[int] = []
        for step in self.gold_steps:
            flat.extend(step)
        return tuple(flat) + (_VOCAB.answer_delim_id,) + self.gold_answer_ids


@dataclass(frozen=True)
class LabeledStep:
    """A reasoning step with its response-side prefix and a +1/-1 label."""

    problem: Problem
    prefix_ids: tuple[int, ...]
    step_ids: tuple[int, ...]
    label: int


def _check_task(task_kind: str, difficulty: int) -> None:
    if task_kind not in TASK_KINDS:
        raise ValueError(f"unknown task kind {task_kind!r}, expected one of {TASK_KINDS}")
    if not MIN_DIFFICULTY <= int(difficulty) <= MAX_DIFFICULTY:
        raise ValueError(
            f"difficulty {difficulty} outside [{MIN_DIFFICULTY}, {MAX_DIFFICULTY}]"
        )


def _encode_step(text: str) -> tuple[int, ...]:
    return tuple(_VOCAB.encode(text))


def _fold_steps(operands: list[int], modulus: int | None) -> tuple[list[str], int]:
    """Running-sum rationale. Returns (step texts, final accumulator)."""
    acc = operands[0]
    steps = []
    for op in operands[1:]:
        nxt = acc + op if modulus is None else (acc + op) % modulus
        steps.append(f"{acc}+{op}={nxt}#")
        acc = nxt
    return steps, acc


def generate_problem(task_kind: str, difficulty: int, rng_seed: int) -> Problem:
    """Deterministic in (task_kind, difficulty, rng_seed)."""
    _check_task(task_kind, difficulty)
    difficulty = int(difficulty)
    rng = np.random.default_rng(rng_seed)

    if task_kind == "chain_add":
        operands = [int(d) for d in rng.integers(0, 10, size=difficulty + 1)]
        steps, total = _fold_steps(operands, None)
        prompt = "^" + "+".join(str(d) for d in operands) + "=?"
        answer = f"{total}$"
    elif task_kind == "modular_chain":
        operands = [int(d) for d in rng.integers(0, 10, size=difficulty + 1)]
        modulus = int(rng.integers(3, 10))
        steps, total = _fold_steps(operands, modulus)
        prompt = "^" + "+".join(str(d) for d in operands) + f"%{modulus}=?"
        answer = f"{total}$"
    else:  # compare_chain: difficulty-1 fold steps plus one comparison step
        operands = [int(d) for d in rng.integers(0, 10, size=difficulty)]
        steps, total = _fold_steps(operands, None)
        lo = max(0, total - 4)
        threshold = total
        while threshold == total:
            threshold = int(rng.integers(lo, total + 5))
        sign = ">" if total > threshold else "<"
        steps.append(f"{total}?{threshold}={sign}#")
        prompt = "^" + "+".join(str(d) for d in operands) + f"?{threshold}=?"
        answer = f"{sign}$"

    return Problem(
        problem_id=int(rng_seed),
        task_kind=task_kind,
        difficulty=difficulty,
        prompt_ids=tuple(_VOCAB.encode(prompt)),
        gold_answer_ids=tuple(_VOCAB.encode(answer)),
        gold_steps=tuple(_encode_step(s) for s in steps),
    )


def verify(problem: Problem, response_ids) -> int:
    """1 iff the span after the last answer delimiter equals the gold answer.

    The gold answer ends with eos, so a truncated response scores 0. Never
    raises on malformed responses.
    """
    resp = [int(t) for t in response_ids]
    delim = _VOCAB.answer_delim_id
    last = -1
    for i, tok in enumerate(resp):
        if tok == delim:
            last = i
    if last < 0:
        return 0
    return int(tuple(resp[last + 1 :]) == problem.gold_answer_ids)


# ---------------------------------------------------------------------------
# labeled corpus
# ---------------------------------------------------------------------------


def _parse_step(text: str) -> tuple[str, str, str, str]:
    """Split "L+A=R#" or "S?T=G#" into (mode, left, right, result)."""
    body = text[:-1] if text.endswith("#") else text
    lhs, res = body.split("=")
    if "?" in lhs:
        left, right = lhs.split("?")
        return "?", left, right, res
    left, right = lhs.split("+")
    return "+", left, right, res


def _corrupt_step(step_text: str, rng: np.random.Generator, modulus: int | None) -> str:
    """Return a variant of the step that is arithmetically false.

    Either perturbs one digit of the stated result, replaces the incoming
    operand, or flips the comparison sign. The perturbed value always
    differs from the gold value at that position.
    """
    mode, left, right, res = _parse_step(step_text)
    if mode == "?":
        flipped = ">" if res == "<" else "<"
        return f"{left}?{right}={flipped}#"
    if rng.random() < 0.5:
        # perturb a result digit; the stated result then differs from the
        # true one, so the equation is false for any operands
        digits = list(res)
        pos = int(rng.integers(len(digits)))
        old = digits[pos]
        new = old
        while new == old:
            new = str(int(rng.integers(10)))
        digits[pos] = new
        return f"{left}+{right}={''.join(digits)}#"
    # replace the operand; for modular steps resample until the stated
    # result is actually wrong under the modulus
    old_op = int(right)
    while True:
        new_op = int(rng.integers(10))
        if new_op == old_op:
            continue
        true_res = int(left) + new_op if modulus is None else (int(left) + new_op) % modulus
        if str(true_res) != res:
            return f"{left}+{new_op}={res}#"


def generate_labeled_corpus(
    n_problems: int,
    corruption_rate: float,
    rng_seed: int,
    *,
    task_kind: str = "chain_add",
    difficulty: int = 3,
) -> list[LabeledStep]:
    """Gold steps labeled +1; each step also yields, with probability
    corruption_rate, a corrupted sibling labeled -1 under the same prefix."""
    _check_task(task_kind, difficulty)
    if not 0.0 < corruption_rate < 1.0:
        raise ValueError("corruption_rate must lie strictly inside (0, 1)")
    if n_problems < 1:
        raise ValueError("n_problems must be positive")
    rng = np.random.default_rng(rng_seed)
    seeds = rng.integers(0, 2**62, size=n_problems)
    out: list[LabeledStep] = []
    for seed in seeds:
        problem = generate_problem(task_kind, difficulty, int(seed))
        modulus = None
        if task_kind == "modular_chain":
            modulus = int(problem.prompt_text().split("%")[1].split("=")[0])
        prefix: tuple[int, ...] = ()
        for step in problem.gold_steps:
            out.append(LabeledStep(problem=problem, prefix_ids=prefix, step_ids=step, label=1))
            if rng.random() < corruption_rate:
                bad = _corrupt_step(_VOCAB.decode(step), rng, modulus)
                out.append(
                    LabeledStep(
                        problem=problem,
                        prefix_ids=prefix,
                        step_ids=_encode_step(bad),
                        label=-1,
                    )
                )
            prefix = prefix + step
    return out


# ---------------------------------------------------------------------------
# jsonl dumps
# ---------------------------------------------------------------------------


def write_problems(path, problems) -> None:
    """One JSON object per line: problem_id, task, difficulty, prompt, answer, steps."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in problems:
            fh.write(
                json.dumps(
                    {
                        "problem_id": p.problem_id,
                        "task": p.task_kind,
                        "difficulty": p.difficulty,
                        "prompt": p.prompt_text(),
                        "answer": p.answer_text(),
                        "steps": p.step_texts(),
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_problems(path) -> dict[int, Problem]:
    out: dict[int, Problem] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                problem = Problem(
                    problem_id=int(rec["problem_id"]),
                    task_kind=rec["task"],
                    difficulty=int(rec["difficulty"]),
                    prompt_ids=tuple(_VOCAB.encode(rec["prompt"])),
                    gold_answer_ids=tuple(_VOCAB.encode(rec["answer"])),
                    gold_steps=tuple(_encode_step(s) for s in rec["steps"]),
                )
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{line_no}: bad problems record ({exc})") from exc
            out[problem.problem_id] = problem
    return out


def write_corpus(path, corpus) -> None:
    """One JSON object per line: problem_id, prefix, step, label."""
    with open(path, "w", encoding="utf-8") as fh:
        for item in corpus:
            fh.write(
                json.dumps(
                    {
                        "problem_id": item.problem.problem_id,
                        "prefix": _VOCAB.decode(item.prefix_ids),
                        "step": _VOCAB.decode(item.step_ids),
                        "label": item.label,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_corpus(path, problems: dict[int, Problem]) -> list[LabeledStep]:
    out: list[LabeledStep] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                pid = int(rec["problem_id"])
                if pid not in problems:
                    raise ValueError(f"unknown problem_id {pid}")
                label = int(rec["label"])
                if label not in (-1, 1):
                    raise ValueError(f"label must be +1 or -1, got {label}")
                out.append(
                    LabeledStep(
                        problem=problems[pid],
                        prefix_ids=tuple(_VOCAB.encode(rec["prefix"])),
                        step_ids=tuple(_VOCAB.encode(rec["step"])),
                        label=label,
                    )
                )
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{line_no}: bad corpus record ({exc})") from exc
    return out
