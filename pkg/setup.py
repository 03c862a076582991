from setuptools import find_packages, setup

setup(
    name="resonant-cgl",
    version="0.1.0",
    packages=find_packages(exclude=["tests"]),
    description="Resonant averaging and effective equations for perturbed NLS / CGL on the torus",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    license="MIT License",
    classifiers=[
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python",
        "License :: OSI Approved :: MIT License",
        "Operating System :: POSIX",
        "Operating System :: MacOS",
        "Operating System :: Unix",
        "Topic :: Scientific/Engineering :: Physics",
    ],
    python_requires=">=3.8",
    install_requires=[
        "numpy>=1.20,<2.0",
        "scipy>=1.6,<2.0",
        "pydantic>=1.8,<2.0",
        "tomlkit>=0.11,<1.0",
    ],
    extras_require={"dev": ["pysen[lint]>=0.10,<0.11", "pytest>=6.0"]},
    package_data={"resonant_cgl": ["py.typed"]},
    entry_points={"console_scripts": ["resonant-cgl=resonant_cgl.__main__:main"]},
)
