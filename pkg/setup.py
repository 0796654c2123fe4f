from setuptools import find_packages, setup

setup(
    name='revert-field',
    version='0.1.0',
    description='Distance fields from noisy point clouds by reverting a GP latent field',
    url='https://github.com/...',
    package_dir={'': 'src'},
    packages=find_packages(where='src'),
    python_requires='>=3.10',
    install_requires=[
        'numpy>=1.26',
        'scipy>=1.15',
        'pydantic==2.9.2',
        'pydantic-settings==2.6.1',
        'python-dotenv==1.0.1',
        'rich',
    ],
    entry_points={
        'console_scripts': ['revert-field=revert_field.cli:main'],
    },

    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
)
