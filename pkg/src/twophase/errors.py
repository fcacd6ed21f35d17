"""Exception hierarchy.

Every error raised for bad input derives from :class:`SamplingError`, which is
a ``ValueError``; the CLI maps these to exit code 2.
"""


class SamplingError(ValueError):
    pass


# ingestion
class EmptyFile(SamplingError):
    pass


class MissingColumn(SamplingError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"missing column: {column!r}")


class NonNumericValue(SamplingError):
    def __init__(self, row, column=None, value=None):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"non-numeric value {value!r} in column {column!r} at row {row}")


class DuplicateRegionId(SamplingError):
    def __init__(self, region_id):
        self.region_id = region_id
        super().__init__(f"duplicate region_id: {region_id!r}")


class InvalidRegion(SamplingError):
    pass


class NegativeCount(SamplingError):
    pass


class UnknownRegion(SamplingError):
    def __init__(self, region_id):
        self.region_id = region_id
        super().__init__(f"region {region_id!r} is not in the population")


class ZeroRowSum(SamplingError):
    def __init__(self, region_id):
        self.region_id = region_id
        super().__init__(f"region {region_id!r} has no basic-block counts")


class AllColumnsConstant(SamplingError):
    pass


# estimators
class TooFewSamples(SamplingError):
    pass


class StratumTooSmall(SamplingError):
    def __init__(self, stratum_id):
        self.stratum_id = stratum_id
        super().__init__(f"stratum {stratum_id!r} needs at least two sampled values")


class WeightsNotNormalized(SamplingError):
    pass


class UnpairedStratum(SamplingError):
    def __init__(self, stratum_id):
        self.stratum_id = stratum_id
        super().__init__(f"stratum {stratum_id!r} is not covered exactly once by the pairing")


class MultiUnitStratum(SamplingError):
    def __init__(self, stratum_id):
        self.stratum_id = stratum_id
        super().__init__(f"stratum {stratum_id!r} must contain exactly one sampled value")


class InconsistentDesign(SamplingError):
    pass


class InvalidLevel(SamplingError):
    pass


# stratification / selection
class KTooLarge(SamplingError):
    pass


class EmptyFeatureMatrix(SamplingError):
    pass


class DegenerateCpi(SamplingError):
    pass


class EmptyStratumUnrecoverable(SamplingError):
    pass


class FeatureMismatch(SamplingError):
    pass


class MissingBaselineCpi(SamplingError):
    def __init__(self, region_id):
        self.region_id = region_id
        super().__init__(f"no baseline CPI for region {region_id!r}")


class MissingValue(SamplingError):
    def __init__(self, region_id):
        self.region_id = region_id
        super().__init__(f"no value for region {region_id!r}")


# planning / validation / reporting
class ZeroMeanPilot(SamplingError):
    pass


class InfeasibleBudget(SamplingError):
    pass


class StratumExhausted(SamplingError):
    pass


class InvalidSpec(SamplingError):
    pass


class DesignInfeasible(SamplingError):
    pass


class EmptyInput(SamplingError):
    pass


class EdgeMismatch(SamplingError):
    pass
