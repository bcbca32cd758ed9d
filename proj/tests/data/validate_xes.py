"""Validate XES documents against tests/data/xes.xsd. Exit status 0 when every file is valid."""
import pathlib
import sys

import xmlschema

schema = xmlschema.XMLSchema(str(pathlib.Path(__file__).with_name("xes.xsd")))
bad = 0
for path in sys.argv[1:]:
    errors = list(schema.iter_errors(path))
    for e in errors[:5]:
        print(f"{path}: {e.reason} at {e.path}")
    bad += bool(errors)
sys.exit(1 if bad else 0)
