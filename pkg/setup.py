import setuptools

setuptools.setup(
    name='liverseg',
    version='0.1.0',
    description='two-stage edge enhanced liver and tumor segmentation on CT slices',
    long_description=open('README.md').read().strip(),
    long_description_content_type='text/markdown',
    packages=setuptools.find_packages(exclude=['tests', 'examples*']),
    entry_points={'console_scripts': ['liverseg=liverseg.cmd:cli']},
    install_requires=[
        'torch', 'numpy', 'scipy', 'nibabel', 'pillow', 'pandas', 'orjson', 'tqdm', 'fire',
    ],
    extras_require={'test': ['pytest']},
    license='MIT License',
    keywords='liver tumor segmentation ct edge distance map res2net unet')
