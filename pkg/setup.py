from setuptools import setup,find_packages

with open("requirements.txt") as f:
    requirements = f.read().splitlines()

setup(
    name="STEPS-DP-SYNTHESIS",
    version="0.1",
    author="vdhinh",
    packages=find_packages(exclude=["tests"]),
    package_data={"config": ["voter_schema.json"]},
    install_requires = requirements,
    entry_points={"console_scripts": ["steps-dp=src.cli:main"]},
)
