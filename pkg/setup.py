"""Package configuration for consensusnav."""

import re

from setuptools import setup, find_packages

# Read version from consensusnav/__init__.py to avoid duplication
with open("consensusnav/__init__.py") as f:
    version = re.search(r'__version__\s*=\s*"(.+?)"', f.read()).group(1)

setup(
    name="consensusnav",
    version=version,
    description="Zero-shot visual-target navigation simulator with consensus-game target identification",
    author="consensusnav contributors",
    license="MIT",
    packages=find_packages(exclude=["tests"]),
    package_data={"consensusnav": ["prompts/*.txt", "data/*.json"]},
    python_requires=">=3.10",
    install_requires=[
        "requests",
        "numpy",
        "scikit-image",
        "scikit-fmm",
    ],
    extras_require={
        "progress": ["tqdm"],
    },
    entry_points={
        "console_scripts": [
            "consensusnav=consensusnav.cli:main",
        ],
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: POSIX :: Linux",
        "Operating System :: MacOS",
    ],
)
