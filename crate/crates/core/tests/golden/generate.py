"""Writes the expected prompt renders for fixture.json.

Kept separate from the Rust renderer on purpose: this is the layout written
out by hand, so the golden files check the implementation rather than echo it.
"""
import json
import pathlib

HERE = pathlib.Path(__file__).parent
LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"


def block(entry, with_question, gold):
    lines = []
    if with_question:
        lines.append("Question: " + entry["question"])
    lines.append("Choices:")
    for i, choice in enumerate(entry["choices"]):
        lines.append("(%s) %s" % (LETTERS[i], choice))
    if gold:
        lines.append("Answer: (%s)" % LETTERS[entry["answer_index"]])
    else:
        lines.append("Answer:")
    return "\n".join(lines)


def main():
    fixture = json.loads((HERE / "fixture.json").read_text())
    for mode, with_question in (("full", True), ("choices_only", False)):
        for k in (0, 3, 5, 10):
            blocks = [block(e, with_question, True) for e in fixture["exemplars"][:k]]
            blocks.append(block(fixture["target"], with_question, False))
            out = HERE / ("%s_%02dshot.txt" % (mode, k))
            out.write_bytes("\n\n".join(blocks).encode("utf-8"))


if __name__ == "__main__":
    main()
