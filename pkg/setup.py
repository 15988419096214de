from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as f:
    long_description = f.read()

setup(
    name="gtprune",
    version="0.1.0",
    description="Simulation and verification toolkit for the test-pruning reduction in non-adaptive group testing",
    long_description=long_description,
    long_description_content_type="text/markdown",
    package_dir={"": "src"},
    package_data={"gtprune": ["py.typed"]},  # Providing type annotations (PEP 561)
    packages=find_packages(where="src"),
    license="MIT",
    python_requires=">=3.9",
    install_requires=[
        "attrs>=21.3",
        "numpy>=1.22",
        "scipy>=1.8",
    ],
    extras_require={
        "dev": [
            "pytest>=7",
            "pytest-cov",
            "coverage",
            "hypothesis",
            "mypy",
            "black",
        ]
    },
    entry_points={"console_scripts": ["gtprune=gtprune.cli:main"]},
    classifiers=[
        "Development Status :: 3 - Alpha",
        "License :: OSI Approved :: MIT License",
        "Intended Audience :: Science/Research",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
)
