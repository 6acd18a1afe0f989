# Rarefy Network Engine Package
