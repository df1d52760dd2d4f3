import math


def number_to_string(number):
    # Shortest text that parses back to the same float64.
    # Integral floats come back without a trailing ".0".
    if isinstance(number, bool):
        return "1" if number else "0"
    if isinstance(number, int):
        return str(number)
    number = float(number)
    if math.isfinite(number) and number.is_integer() and abs(number) < 1e15:
        return str(int(number))
    return repr(number)


class RecordMixin:
    """
    Gives a record its single-line log representation.

    Subclasses set ``tag`` (one of the ``protocol.ext_vru_*`` constants) and
    implement ``record_values()`` returning the values in the protocol field
    order.
    """

    tag = None

    def record_values(self):
        raise NotImplementedError

    def dumps(self):
        values = []
        for value in self.record_values():
            if isinstance(value, str):
                values.append(value)
            else:
                values.append(number_to_string(value))
        return self.tag + ":" + ",".join(values)

    def __str__(self):
        return self.dumps()


class GroupedRecordMixin:
    def dumps(self):
        return "\n".join(item.dumps() for item in self)

    def __str__(self):
        return self.dumps()
