# Copyright 2024 The lowdata-audio Authors

# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at

#     http://www.apache.org/licenses/LICENSE-2.0

# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

from setuptools import find_packages, setup


setup(
    name="lowdata_audio",
    version="0.1.0",  # expected format is one of x.y.z.dev0, or x.y.z.rc1 or x.y.z (no to dashes, yes to dots)
    author="The lowdata-audio Authors",
    description="Audio classification with few training clips per class: regularized CNNs, prototypical networks and transfer learning",
    long_description=open("README.md", "r", encoding="utf-8").read(),
    long_description_content_type="text/markdown",
    license="Apache 2.0 License",
    python_requires=">=3.10",
    package_dir={"": "src"},
    packages=find_packages("src"),
    package_data={"lowdata_audio": ["configs/plans/*.json"]},
    install_requires=[
        "numpy",
        "scipy",
        "librosa",
        "soundfile",
        "pandas",
        "tqdm",
        "python-dotenv",
        "haikunator",
    ],
    entry_points={
        "console_scripts": [
            "lowdata=lowdata_audio.main:main"
        ]
    },
)
