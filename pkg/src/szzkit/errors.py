"""Exception hierarchy shared across szzkit modules."""


class SzzkitError(Exception):
    """Base class for all szzkit errors."""


# -- git access ---------------------------------------------------------------

class GitError(SzzkitError):
    pass


class NotFound(GitError):
    pass


class Ambiguous(GitError):
    pass


class RepoIOError(GitError):
    pass


class LineOutOfRange(GitError):
    pass


class FileAbsent(GitError):
    pass


class BinaryFile(GitError):
    pass


class NoParent(GitError):
    pass


# -- candidates ---------------------------------------------------------------

class NonEmptyDir(SzzkitError):
    pass


class EmptyCandidates(SzzkitError):
    pass


# -- agent runtime ------------------------------------------------------------

class ToolError(SzzkitError):
    """A tool call failed; reported back to the model, never raised out of a session."""


class OutsideWorkspace(ToolError):
    pass


class ToolNotFound(ToolError):
    pass


class BadRegex(ToolError):
    pass


class BackendError(SzzkitError):
    pass


class ScriptExhausted(SzzkitError):
    """The scripted backend was asked for more turns than it holds."""


# -- evaluation ---------------------------------------------------------------

class EmptyGroundTruth(SzzkitError):
    pass


class EmptyInput(SzzkitError):
    pass


class AllZeroDifferences(SzzkitError):
    pass


class SchemaViolation(SzzkitError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class NoGrepCalls(SzzkitError):
    pass
