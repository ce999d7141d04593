import ast
import os

import setuptools

HERE = os.path.dirname(os.path.abspath(__file__))
ADDON = "bidomain_homogenization"

with open(os.path.join(HERE, ADDON, "__manifest__.py"), encoding="utf-8") as f:
    manifest = ast.literal_eval(f.read())

setuptools.setup(
    name=ADDON.replace("_", "-"),
    version=manifest["version"],
    description=" ".join(manifest["summary"].split()),
    license="LGPL-3.0-or-later",
    author=manifest["author"],
    packages=setuptools.find_packages(include=[ADDON, ADDON + ".*"]),
    package_data={ADDON: ["__manifest__.py", "demo/*.ini", "readme/*.rst"]},
    install_requires=manifest["external_dependencies"]["python"],
    extras_require={"test": ["pytest"]},
    python_requires=">=3.8",
    entry_points={
        "console_scripts": [
            "bidomain-homogenization=%s.controllers.cli:main" % ADDON,
        ]
    },
    classifiers=[
        "Programming Language :: Python",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
)
