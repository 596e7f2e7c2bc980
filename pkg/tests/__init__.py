# SCMN-desk tests package
