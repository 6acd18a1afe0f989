# Rarefy Evaluation Package
