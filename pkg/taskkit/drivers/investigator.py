#!/usr/bin/env python3
"""Example external investigator speaking the engine's wire protocol.

Reads one JSON request document from stdin and writes one JSON response
document to stdout. The report only ever cites paths from the request's
`visible_paths`, so access-scope discipline is kept by construction.
Exits nonzero on empty or malformed input.
"""

import json
import sys


def main() -> int:
    raw = sys.stdin.read()
    if not raw.strip():
        print("empty request on stdin", file=sys.stderr)
        return 1
    try:
        request = json.loads(raw)
    except ValueError as exc:
        print(f"invalid request JSON: {exc}", file=sys.stderr)
        return 1
    for key in ("protocol_version", "role", "round", "try", "visible_paths"):
        if key not in request:
            print(f"request missing key {key!r}", file=sys.stderr)
            return 1

    visible = list(request["visible_paths"])
    if int(request["round"]) <= 1:
        cited = ", ".join(visible) if visible else "(no visible data)"
        payload = {
            "report": (f"Reviewed training-side data only ({cited}). Several "
                       f"failures involve negated sentiment words; add guidance "
                       f"for negation to the prompt."),
            "hypothesis": "add negation guidance to the prompt",
            "has_hypothesis": True,
            "wants_retry_on_reject": False,
        }
    else:
        payload = {
            "report": "No further hypothesis from the visible training data.",
            "has_hypothesis": False,
        }
    print(json.dumps({"role": request["role"], "payload": payload}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
