#!/usr/bin/env python3
"""Example external black box: reads one JSON request on stdin, prints the response."""
import json
import sys

req = json.load(sys.stdin)
p = req["params"]
print(f"evaluating {req['eval_id']}", file=sys.stderr)
print((p["x"] - 0.3) ** 2 + (p["y"] + 0.1) ** 2 + 0.1 * p["x"] * p["y"])
