"""Regenerate the codec conformance corpus.

The corpus is the cross-language contract between the proxy-side codecs
and the browser-side codecs: both suites must reproduce every `encoded`
string from `values` and recover `values` from `encoded`, byte for byte.
Deterministic; run only when the codec set changes, and commit the result.
"""

import json
import random
import string
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from bulwark.config import CARRIERS, serialize_carrier

EDGE_VALUES = [
    "",
    "plain",
    "with space",
    "a&b=c",
    "percent%20already",
    "semi;colon",
    "slash/path",
    "plus+sign",
    "unicode-éÿ",
    "5d938a",
    "integrator.com/fb-callback",
    "390639",
]


def main() -> None:
    rng = random.Random(1207)
    entries = []

    def add(carrier: str, fields: list[tuple[str, str]], values: list[tuple[str, str]]) -> None:
        entries.append(
            {
                "id": f"{carrier}-{len(entries):03d}",
                "carrier": carrier,
                "fields": [list(f) for f in fields],
                "values": [list(v) for v in values],
                "encoded": serialize_carrier(carrier, values),
            }
        )

    # the provider-dialog request shape, as configured in the worker example
    add(
        "query-string",
        [("client_id", "string"), ("redirect_uri", "url"), ("state", "string")],
        [
            ("client_id", "390639"),
            ("redirect_uri", "integrator.com/fb-callback"),
            ("state", "5d938a"),
        ],
    )

    for carrier in CARRIERS:
        for value in EDGE_VALUES:
            add(carrier, [("field", "string")], [("field", value)])

    for carrier in CARRIERS:
        for i in range(2):
            width = rng.randint(2, 5)
            fields = [(f"f{j}", "string") for j in range(width)]
            values = [
                (
                    name,
                    "".join(
                        rng.choice(string.ascii_letters + string.digits + " &=;/%+?#")
                        for _ in range(rng.randint(0, 14))
                    ),
                )
                for name, _ in fields
            ]
            add(carrier, fields, values)

    add("query-string", [("n", "integer")], [("n", "42")])
    add("form-body", [("n", "integer")], [("n", "-7")])
    add("json-body", [("u", "url")], [("u", "https://example.org/a?b=c")])
    add("path-segment", [("a", "string"), ("b", "string")], [("a", "x/y"), ("b", "z")])
    add("header", [("k", "string"), ("v", "string")], [("k", "h1"), ("v", "text; more")])
    add("cookie", [("session", "string")], [("session", "abc=def; ghi")])

    corpus = {
        "description": "codec conformance corpus shared by the proxy-side and browser-side runtimes",
        "entries": entries,
    }
    out = Path(__file__).resolve().parents[1] / "conformance" / "codec-conformance.json"
    out.write_text(json.dumps(corpus, indent=2, ensure_ascii=False) + "\n")
    print(f"wrote {len(entries)} entries to {out}")


if __name__ == "__main__":
    main()
