from pipebrew.generators.inception_like import InceptionLikeProfileGenerator
from pipebrew.generators.uniform import UniformProfileGenerator
from pipebrew.generators.vgg_like import VggLikeProfileGenerator

GENERATORS = {
    generator.kind: generator
    for generator in (
        UniformProfileGenerator,
        VggLikeProfileGenerator,
        InceptionLikeProfileGenerator,
    )
}

__all__ = [
    "GENERATORS",
    "InceptionLikeProfileGenerator",
    "UniformProfileGenerator",
    "VggLikeProfileGenerator",
]
