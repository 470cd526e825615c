import json
import os
import time


MANIFEST_SUFFIX = ".manifest.json"


def manifest_path(output):
    return "{}{}".format(output, MANIFEST_SUFFIX)


class RunManifest:
    """What a run did: enough to replay it and get the same data files."""

    def __init__(self, subcommand, arguments, config, seed, version, outputs=None, duration=0.0):
        self.subcommand = subcommand
        self.arguments = list(arguments)
        self.config = config
        self.seed = seed
        self.version = version
        self.outputs = list(outputs or [])
        self.duration = duration
        self._started = time.monotonic()

    def add_output(self, path):
        self.outputs.append(os.path.abspath(path))

    def finish(self):
        self.duration = time.monotonic() - self._started
        return self

    def to_json(self):
        return {
            "subcommand": self.subcommand,
            "arguments": self.arguments,
            "config": self.config,
            "seed": self.seed,
            "version": self.version,
            "outputs": self.outputs,
            "duration": self.duration,
        }

    @classmethod
    def from_json(cls, record):
        return cls(record["subcommand"], record.get("arguments", []), record.get("config", {}),
                   record["seed"], record.get("version"), record.get("outputs", []),
                   record.get("duration", 0.0))

    def write_beside(self, output):
        """Write the manifest next to ``output`` and return its path."""
        path = manifest_path(output)
        with open(path, "w") as stream:
            json.dump(self.to_json(), stream, indent=2, sort_keys=True, default=str)
            stream.write("\n")
        return path

    @classmethod
    def read(cls, path):
        with open(path) as stream:
            return cls.from_json(json.load(stream))

    def __repr__(self):
        return "RunManifest({} seed={} outputs={})".format(self.subcommand, self.seed, len(self.outputs))
