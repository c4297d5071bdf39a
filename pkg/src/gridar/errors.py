"""Exception types shared across the package."""


class GridarError(Exception):
    """Base class for all package-specific errors."""


class IndivisibleCanvas(GridarError):
    """Canvas height is not divisible by the requested band count."""


class ShapeMismatch(GridarError):
    """Segments do not tile the target canvas."""


class OutOfRange(GridarError):
    """Position or index outside the canvas."""


class UnknownToken(GridarError):
    """Token id outside the codebook."""


class NonSequentialAccess(GridarError):
    """next_logits called at a position other than the session cursor."""


class DegenerateDistribution(GridarError):
    """No token has positive probability."""


class UnpopulatedCanvas(GridarError):
    """Render or scoring requested on a canvas with unfilled positions."""


class PromptGrammarError(GridarError):
    """Prompt text does not parse."""


class LengthMismatch(GridarError):
    """Logit vectors of different lengths passed to a guidance op."""


class InfeasibleRemainder(GridarError):
    """Reformulation asked for a candidate that exceeds its own prompt."""


class VerifierError(GridarError):
    """Base for remote-verifier failures; the pipeline's fallback policy catches this."""


class Timeout(VerifierError):
    """Remote verifier did not answer in time."""


class TransportError(VerifierError):
    """HTTP-level failure talking to the remote verifier."""


class MalformedResponse(VerifierError):
    """Remote verifier answered with JSON that violates the wire schema."""


class AllRejected(GridarError):
    """Every candidate in a stage was judged impossible."""


class EmptySpec(GridarError):
    """Suite specification produces no prompts."""


class NoFailingPrompts(GridarError):
    """Pilot screening found no single-sample failures to study."""
