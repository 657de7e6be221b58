"""Run manifests: flat key=value records of a command's resolved run.

A manifest captures the command, the tool version, the exact argv (for
replay), the resolved configuration, input file digests, and output
paths.  Content is deterministic for a given invocation, so replaying a
manifest writes byte-identical files, manifest included.
"""

import hashlib

from .errors import DataError


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command: str, argv: list[str], config: dict,
                   inputs: dict, outputs: dict, version: str) -> None:
    lines = [f"command={command}", f"version={version}"]
    for i, arg in enumerate(argv):
        lines.append(f"argv.{i}={arg}")
    for key in sorted(config):
        lines.append(f"config.{key}={config[key]}")
    for name in sorted(inputs):
        lines.append(f"input.{name}={inputs[name]}")
        lines.append(f"input.{name}.sha256={file_digest(inputs[name])}")
    for name in sorted(outputs):
        lines.append(f"output.{name}={outputs[name]}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    """Parse a manifest into {command, version, argv, config, inputs, outputs}."""
    record = {"argv": {}, "config": {}, "inputs": {}, "outputs": {}}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}: line {lineno}: expected key=value")
            key, value = line.split("=", 1)
            if key == "command":
                record["command"] = value
            elif key == "version":
                record["version"] = value
            elif key.startswith("argv."):
                record["argv"][int(key[5:])] = value
            elif key.startswith("config."):
                record["config"][key[7:]] = value
            elif key.startswith("input.") and key.endswith(".sha256"):
                pass
            elif key.startswith("input."):
                record["inputs"][key[6:]] = value
            elif key.startswith("output."):
                record["outputs"][key[7:]] = value
    if "command" not in record:
        raise DataError(f"{path}: missing command")
    argv = [record["argv"][i] for i in sorted(record["argv"])]
    record["argv"] = argv
    return record
