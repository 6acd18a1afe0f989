# Rarefy Config Package
