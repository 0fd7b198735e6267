from setuptools import setup

setup(
    name="evrobust",
    version="0.1.0",
    description="Event-camera robustness toolkit: DVS triggering model, perturbation, attention modules and sweep harness",
    python_requires=">=3.10",
    py_modules=[
        "api",
        "assets",
        "cli",
        "defs",
        "dvs",
        "errors",
        "events",
        "metrics",
        "models",
        "rng",
        "rps",
        "tasks",
        "utils",
    ],
    packages=["net"],
    install_requires=[
        line.strip()
        for line in open("requirements.txt", encoding="utf-8")
        if line.strip() and not line.startswith("#") and line.strip() != "pytest"
    ],
    entry_points={"console_scripts": ["evrobust = cli:main"]},
)
