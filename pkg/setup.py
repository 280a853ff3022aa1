from setuptools import setup
setup(name='exbubble',
      use_scm_version={
          "write_to": "exbubble/_version.py",
          "write_to_template": '__version__ = "{version}"',
          "tag_regex": r"^(?P<prefix>v)?(?P<version>[^\+]+)(?P<suffix>.*)?$",
      },
      description='Exchange options, bubbles and explosion in Markovian factor models',
      packages=['exbubble',
                'exbubble.tests'],
      install_requires=['numpy',
                        'scipy',
                        'pandas',
                        'xarray',
                        'pyyaml',
                        'pytest',
                        'hypothesis'],
      entry_points={'console_scripts': ['exbubble=exbubble.cli:main']},
      package_data={'exbubble.tests': ['fixtures/*']},
      zip_safe=False,
      classifiers=["Programming Language :: Python :: 3",
                   "License :: OSI Approved :: MIT License",
                   "Operating System :: OS Independent"],
      include_package_data=True)
