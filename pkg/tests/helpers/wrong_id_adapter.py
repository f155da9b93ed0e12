"""Test adapter that echoes a wrong request_id."""

import json
import sys

for line in sys.stdin:
    json.loads(line)
    sys.stdout.write(json.dumps({"request_id": "bogus", "instances": []}) + "\n")
    sys.stdout.flush()
