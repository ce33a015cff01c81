"""Error hierarchy for the gadget toolkit.

Configuration problems map to CLI exit code 1, everything else raised while
building or running an experiment maps to exit code 2.
"""


class GadgetError(Exception):
    """Base class for every toolkit error"""
    exit_code = 2


# Configuration

class ConfigError(GadgetError):
    exit_code = 1


class ParseError(ConfigError):
    def __init__(self, line, detail=''):
        self.line = line
        self.detail = detail
        super().__init__(f"line {line}: {detail}" if detail else f"line {line}: cannot parse")


class UnknownKey(ConfigError):
    def __init__(self, line, key):
        self.line = line
        self.key = key
        super().__init__(f"line {line}: unknown key '{key}'")


class ConfigRejected(ConfigError):
    """Values parse but violate a cross-field constraint"""

    def __init__(self, reason):
        self.reason = reason
        super().__init__(reason)


# Program construction

class ProgramError(GadgetError):
    pass


class CyclicOrForwardDep(ProgramError):
    def __init__(self, instruction_id):
        self.instruction_id = instruction_id
        super().__init__(f"instruction {instruction_id} depends on itself or a younger instruction")


class MissingAddress(ProgramError):
    def __init__(self, instruction_id):
        self.instruction_id = instruction_id
        super().__init__(f"instruction {instruction_id} is a memory operation without an address")


class NotABranch(ProgramError):
    def __init__(self, instruction_id):
        self.instruction_id = instruction_id
        super().__init__(f"instruction {instruction_id} is not a BRANCH")


class EmptyPath(ProgramError):
    def __init__(self, tag=''):
        self.tag = tag
        super().__init__(f"path '{tag}' has no operations")


class CrossPathDependency(ProgramError):
    def __init__(self, id_from, id_to):
        self.id_from = id_from
        self.id_to = id_to
        super().__init__(f"instruction {id_from} depends on {id_to} across racing paths")


class UnsynchronizedStart(ProgramError):
    def __init__(self, tag):
        self.tag = tag
        super().__init__(f"path '{tag}' does not start from the shared head load")


class SameAddress(ProgramError):
    def __init__(self, address):
        self.address = address
        super().__init__(f"both probe loads use line {address}")


class DifferentSets(ProgramError):
    def __init__(self, addr_a, addr_b):
        self.addr_a = addr_a
        self.addr_b = addr_b
        super().__init__(f"lines {addr_a} and {addr_b} map to different cache sets")


class WrongSet(ProgramError):
    def __init__(self, address, set_index):
        self.address = address
        self.set_index = set_index
        super().__init__(f"line {address} does not map to set {set_index}")


# Experiment execution

class ExperimentError(GadgetError):
    pass


class ProbeNeverReferenced(ExperimentError):
    def __init__(self, address):
        self.address = address
        super().__init__(f"probe line {address} is not loaded by the program")


class PrimeFailed(ExperimentError):
    def __init__(self, set_index, passes):
        self.set_index = set_index
        self.passes = passes
        super().__init__(f"set {set_index} not primed after {passes} passes")


class NoPeriodicState(ExperimentError):
    def __init__(self, pattern):
        self.pattern = tuple(pattern)
        super().__init__(f"no periodic PLRU state for pattern {''.join(self.pattern)}")


class RobExceeded(ExperimentError):
    def __init__(self, ref_len, rob_size):
        self.ref_len = ref_len
        self.rob_size = rob_size
        super().__init__(f"reference path of {ref_len} ops does not fit a {rob_size}-entry ROB")


class CalibrationDegenerate(ExperimentError):
    def __init__(self, mean):
        self.mean = mean
        super().__init__(f"calibration means coincide at {mean}")


class CalibrationImpossible(ExperimentError):
    def __init__(self, hit_latency, miss_latency):
        self.hit_latency = hit_latency
        self.miss_latency = miss_latency
        super().__init__(
            f"no reference length separates {hit_latency}-cycle hits from {miss_latency}-cycle misses"
        )
