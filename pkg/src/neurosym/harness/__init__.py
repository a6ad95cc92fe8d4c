"""Built-in target programs and the benchmark runners."""

from .exploit import (
    MSGBUF_SIZE, HttpProgram, ParseOutcome, build_request, exploit_constraints, format_version,
    http_program, process_request, request_from_assignment,
)
from .programs import (
    ExternalProgram, ProgramError, TargetProgram, get_program, guard_type, loop_suite,
    parse_observations, program_names,
)
from .runner import (
    TaskConfig, TaskReport, check_exploit, format_table, loop_constraint_file, run_exploit_task,
    run_loop_task, run_suite, sample, split, subsample, validate_witness,
)

__all__ = [
    "MSGBUF_SIZE", "HttpProgram", "ParseOutcome", "build_request", "exploit_constraints",
    "format_version", "http_program", "process_request", "request_from_assignment",
    "ExternalProgram", "ProgramError", "TargetProgram", "get_program", "guard_type",
    "loop_suite", "parse_observations", "program_names",
    "TaskConfig", "TaskReport", "check_exploit", "format_table", "loop_constraint_file",
    "run_exploit_task", "run_loop_task", "run_suite", "sample", "split", "subsample",
    "validate_witness",
]
