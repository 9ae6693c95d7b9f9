# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

from setuptools import setup, find_packages
from pathlib import Path

here = Path(__file__).parent.resolve()

def read_long_description():
    for candidate in ("ABOUT.md", "README.md"):
        path = here / candidate
        if path.exists():
            return path.read_text(encoding="utf-8"), "text/markdown"
    return "PaFi/HiWi: sparse and adapter fine-tuning toolkit.", "text/plain"

long_description, long_type = read_long_description()

setup(
    name="pafi-hiwi",                      # external name
    version="0.1.0",
    description="PaFi/HiWi: task-agnostic sparse masks and mergeable weight adapters for fine-tuning.",
    long_description=long_description,
    long_description_content_type=long_type,
    author="pafi-hiwi contributors",
    license="AGPL-3.0-or-later",
    python_requires=">=3.10,<3.15",
    packages=find_packages(include=["pafi", "pafi.*"]),  # internal package
    install_requires=[
        "numpy>=1.26",
        "pydantic>=2.8.2",
        "pyyaml>=6.0.2",
        "python-dotenv>=1.0.1",
    ],
    extras_require={
        "test": [
            "pytest",
        ],
    },
    entry_points={
        "console_scripts": [
            "paficli=pafi.cli:main_cli",
        ],
    },
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Programming Language :: Python :: 3 :: Only",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Programming Language :: Python :: 3.13",
        "Programming Language :: Python :: 3.14",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
)
