"""Configuration, sampling and the command-line front end."""
