import math
from dataclasses import dataclass

from vrutrack import protocol

SCHEMAS = {
    protocol.ext_vru_frame: protocol.frame_fields,
    protocol.ext_vru_detection: protocol.detection_fields,
    protocol.ext_vru_label: protocol.label_fields,
    protocol.ext_vru_track: protocol.track_fields,
    protocol.ext_vru_example: protocol.example_fields,
}

INTEGER_FIELDS = {"track_id", "sequence_id", "frame_index", "track_key"}
FLAG_FIELDS = {"is_null", "confirmed", "target_assoc"}
TEXT_FIELDS = {"id", "class", "sensor"}


def field_kind(name):
    if name in INTEGER_FIELDS:
        return "int"
    if name in FLAG_FIELDS:
        return "flag"
    if name in TEXT_FIELDS:
        return "text"
    return "float"


@dataclass
class RecordValidationError(Exception):
    line_number: int
    line: str
    field: str = None
    how_to_fix: str = "Please fix the record."
    description: str = "There is an invalid record in the log."

    def __str__(self):
        where = f" (field {self.field})" if self.field else ""
        return (
            "Invalid record found in the log.\n"
            f"Line {self.line_number}{where}: {self.description}\n"
            f"Line content: {self.line}\n"
            f"How to fix: {self.how_to_fix}"
            "\n"
        )


class RecordRuleBase:
    """
    A check over one tagged record line. `values` maps field names to their
    raw text; fields beyond the schema are already dropped.
    """

    description: str = ""
    how_to_fix: str = ""

    def __init__(self, line_number, line, tag, values):
        self.line_number = line_number
        self.line = line
        self.tag = tag
        self.values = values
        self.field = None

    def validate(self):
        raise NotImplementedError

    def get_error(self):
        return RecordValidationError(
            line_number=self.line_number,
            line=self.line,
            field=self.field,
            description=self.description,
            how_to_fix=self.how_to_fix,
        )


class CompleteRecord(RecordRuleBase):
    description = "The record has fewer fields than its tag requires."
    how_to_fix = "Write every field listed for the tag, in order."

    def validate(self):
        for name in SCHEMAS[self.tag]:
            if name not in self.values:
                self.field = name
                return False
        return True


class FiniteNumbers(RecordRuleBase):
    description = "A numeric field is not a finite number."
    how_to_fix = "Use finite decimal numbers; NaN and infinity are not allowed."

    def validate(self):
        for name, text in self.values.items():
            kind = field_kind(name)
            if kind == "float":
                try:
                    ok = math.isfinite(float(text))
                except ValueError:
                    ok = False
            elif kind == "int":
                ok = _is_integer(text)
            else:
                continue
            if not ok:
                self.field = name
                return False
        return True


class ValidFlags(RecordRuleBase):
    description = "A flag field must be 0 or 1."
    how_to_fix = "Write flags as 0 or 1."

    def validate(self):
        for name in FLAG_FIELDS.intersection(self.values):
            if self.values[name] not in ("0", "1"):
                self.field = name
                return False
        return True


class KnownClass(RecordRuleBase):
    description = "Unknown object class."
    how_to_fix = "Use one of: " + ", ".join(protocol.classes) + "."

    def validate(self):
        if "class" in self.values and self.values["class"] not in protocol.classes:
            self.field = "class"
            return False
        return True


class KnownSensor(RecordRuleBase):
    description = "Unknown sensor channel."
    how_to_fix = "Use one of: " + ", ".join(protocol.sensors) + "."

    def validate(self):
        if "sensor" in self.values and self.values["sensor"] not in protocol.sensors:
            self.field = "sensor"
            return False
        return True


class NonEmptyId(RecordRuleBase):
    description = "Detection ids must be non-empty."
    how_to_fix = "Give every detection an id unique within its frame."

    def validate(self):
        if "id" in self.values and not self.values["id"].strip():
            self.field = "id"
            return False
        return True


def _is_integer(text):
    try:
        int(text)
    except ValueError:
        return False
    return True


available_rules = [
    CompleteRecord,
    FiniteNumbers,
    ValidFlags,
    KnownClass,
    KnownSensor,
    NonEmptyId,
]


def split_record(line):
    """('#TAG', [raw values]) for a tagged record line."""
    tag, _, rest = line.partition(":")
    return tag, (rest.split(",") if rest else [])


def record_values(tag, raw):
    """Field name -> raw text, ignoring trailing fields the schema does not know."""
    return dict(zip(SCHEMAS[tag], (value.strip() for value in raw)))


def check_record(line_number, line, tag, values):
    errors = []
    for rule in available_rules:
        validator = rule(line_number, line, tag, values)
        if not validator.validate():
            errors.append(validator.get_error())
            if rule is CompleteRecord:
                break
    return errors


def validate(lines):
    """Every rule violation in `lines`, with 1-based line numbers."""
    errors = []
    for number, line in enumerate(lines, 1):
        line = line.strip()
        tag = line.split(":", 1)[0]
        if tag not in SCHEMAS:
            continue
        _, raw = split_record(line)
        errors.extend(check_record(number, line, tag, record_values(tag, raw)))
    return errors
