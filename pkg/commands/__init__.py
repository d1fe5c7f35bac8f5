# commands/ - One module per CLI command; each exposes setup(app)
