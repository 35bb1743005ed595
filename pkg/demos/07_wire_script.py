"""Drive a channel endpoint from another process over TCP.

The script server plays endpoint B of a JSON op schedule and prints a
transcript of what it received; any client that speaks the frame format
can be endpoint A. Here the reference client does it, and the transcript
matches a fully in-process run of the same script byte for byte. This is
the seam a foreign-language binding plugs into.
"""

import json
import subprocess
import sys
import tempfile

from charmlet.chanserv import run_client, run_native, validate_script

SCRIPT = validate_script({
    "channel_id": 11,
    "eager_threshold": 2048,
    "seed": 2024,
    "ab_sizes": [100, 40000],
    "ba_sizes": [2048],
    "a_ops": [["send", 0, "host"], ["recv", 0, "dev"], ["send", 1, "dev"]],
    "b_ops": [["recv", 0, "host"], ["send", 0, "host"], ["recv", 1, "host"]],
})


def main():
    native = run_native(SCRIPT)

    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as f:
        json.dump(SCRIPT, f)
        path = f.name
    server = subprocess.Popen(
        [sys.executable, "-m", "charmlet.chanserv", "serve", "--script", path],
        stdout=subprocess.PIPE, text=True,
    )
    port = int(server.stdout.readline().split()[1])
    print(f"server ready on 127.0.0.1:{port}")

    client = run_client(SCRIPT, port)
    served = json.loads(server.communicate(timeout=30)[0].strip().splitlines()[-1])

    print("endpoint A transcript (wire):  ", client["a"])
    print("endpoint A transcript (native):", native["a"])
    print("endpoint B transcript (wire):  ", served["b"])
    print("endpoint B transcript (native):", native["b"])
    assert client["a"] == native["a"] and served["b"] == native["b"]
    print("wire and native transcripts match")


if __name__ == "__main__":
    main()
